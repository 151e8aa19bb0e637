//! Element / category / axis taxonomy of the constraint library.
//!
//! Every category carries an ordered list of annotation dimensions. A
//! constraint's axis codes are positional: the i-th code belongs to the i-th
//! dimension of its category.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Top-level narrative element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Element {
    Event,
    Style,
    Character,
    Setting,
}

impl Element {
    pub const ALL: [Element; 4] = [
        Element::Event,
        Element::Style,
        Element::Character,
        Element::Setting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Element::Event => "Event",
            Element::Style => "Style",
            Element::Character => "Character",
            Element::Setting => "Setting",
        }
    }

    /// Lower-case prefix used in constraint ids (`style_22`).
    pub fn id_prefix(self) -> &'static str {
        match self {
            Element::Event => "event",
            Element::Style => "style",
            Element::Character => "character",
            Element::Setting => "setting",
        }
    }

    pub fn categories(self) -> impl Iterator<Item = Category> {
        Category::ALL.into_iter().filter(move |c| c.element() == self)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Element {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown element `{s}`"))
    }
}

/// One of the five categories inside an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    EpistemologicalTransformation,
    Reorientation,
    Disruption,
    RelationalRealignment,
    Diffusion,
    WriteLikeX,
    ToneMood,
    SyntaxSentenceStructure,
    TemporalStructure,
    NarrativePerspective,
    Motive,
    SocialStatus,
    RelationalIdentity,
    CulturalIdentity,
    EmbodiedDifference,
    TemporalSetting,
    MacroSpatialSetting,
    MicroSpatialSetting,
    SocioPoliticalOrder,
    CulturalContext,
}

/// A single annotation dimension: a name and its legal codes with labels.
#[derive(Debug, Clone, Copy)]
pub struct AxisDimension {
    pub name: &'static str,
    pub codes: &'static [(&'static str, &'static str)],
}

impl AxisDimension {
    pub fn label(&self, code: &str) -> Option<&'static str> {
        self.codes.iter().find(|(c, _)| *c == code).map(|(_, l)| *l)
    }

    pub fn accepts(&self, code: &str) -> bool {
        self.label(code).is_some() || self.accepts_connection(code)
    }

    // `C#` codes link a reorientation to another event constraint.
    fn accepts_connection(&self, code: &str) -> bool {
        self.name == "connection"
            && code
                .strip_prefix('C')
                .and_then(|n| n.parse::<u32>().ok())
                .is_some_and(|n| (1..=50).contains(&n))
    }

    pub fn describe(&self, code: &str) -> String {
        match self.label(code) {
            Some(l) => l.to_string(),
            None if self.accepts_connection(code) => {
                format!("Connected (E{})", &code[1..])
            }
            None => code.to_string(),
        }
    }
}

// A macro rather than a const fn so the tables below are promoted to statics.
macro_rules! dim {
    ($name:expr, $codes:expr $(,)?) => {
        AxisDimension {
            name: $name,
            codes: $codes,
        }
    };
}

const REALISM: AxisDimension = dim!("realism", &[("R", "Realistic"), ("NR", "Non-realistic")]);

impl Category {
    pub const ALL: [Category; 20] = [
        Category::EpistemologicalTransformation,
        Category::Reorientation,
        Category::Disruption,
        Category::RelationalRealignment,
        Category::Diffusion,
        Category::WriteLikeX,
        Category::ToneMood,
        Category::SyntaxSentenceStructure,
        Category::TemporalStructure,
        Category::NarrativePerspective,
        Category::Motive,
        Category::SocialStatus,
        Category::RelationalIdentity,
        Category::CulturalIdentity,
        Category::EmbodiedDifference,
        Category::TemporalSetting,
        Category::MacroSpatialSetting,
        Category::MicroSpatialSetting,
        Category::SocioPoliticalOrder,
        Category::CulturalContext,
    ];

    pub fn element(self) -> Element {
        use Category::*;
        match self {
            EpistemologicalTransformation | Reorientation | Disruption | RelationalRealignment
            | Diffusion => Element::Event,
            WriteLikeX | ToneMood | SyntaxSentenceStructure | TemporalStructure
            | NarrativePerspective => Element::Style,
            Motive | SocialStatus | RelationalIdentity | CulturalIdentity | EmbodiedDifference => {
                Element::Character
            }
            TemporalSetting | MacroSpatialSetting | MicroSpatialSetting | SocioPoliticalOrder
            | CulturalContext => Element::Setting,
        }
    }

    pub fn name(self) -> &'static str {
        use Category::*;
        match self {
            EpistemologicalTransformation => "Epistemological Transformation",
            Reorientation => "Reorientation",
            Disruption => "Disruption",
            RelationalRealignment => "Relational Realignment",
            Diffusion => "Diffusion",
            WriteLikeX => "Write like X",
            ToneMood => "Tone & Mood",
            SyntaxSentenceStructure => "Syntax & Sentence Structure",
            TemporalStructure => "Temporal Structure",
            NarrativePerspective => "Narrative Perspective",
            Motive => "Motive",
            SocialStatus => "Social Status",
            RelationalIdentity => "Relational Identity",
            CulturalIdentity => "Cultural Identity",
            EmbodiedDifference => "Embodied Difference",
            TemporalSetting => "Temporal Setting",
            MacroSpatialSetting => "Macro Spatial Setting",
            MicroSpatialSetting => "Micro Spatial Setting",
            SocioPoliticalOrder => "Socio-political Order",
            CulturalContext => "Cultural Context",
        }
    }

    /// Default reference category for within-element rate ratios: the
    /// alphabetically first category name of the element.
    pub fn default_baseline(element: Element) -> Category {
        element
            .categories()
            .min_by_key(|c| c.name().to_ascii_lowercase())
            .expect("every element has categories")
    }

    pub fn dimensions(self) -> &'static [AxisDimension] {
        use Category::*;
        match self {
            EpistemologicalTransformation => &[
                dim!("source", &[("I", "Internal"), ("E", "External")]),
                dim!("tempo", &[("G", "Gradual"), ("S", "Sudden")]),
                dim!("trajectory", &[("X", "Irreversible"), ("R", "Reversible")]),
            ],
            Reorientation => &[
                dim!("agency", &[("V", "Voluntary"), ("IV", "Involuntary")]),
                dim!("valence", &[("P", "Positive"), ("N", "Negative"), ("U", "Neutral")]),
                dim!("connection", &[("N", "Not Connected")]),
            ],
            Disruption => &[
                dim!(
                    "cause",
                    &[
                        ("H", "Human"),
                        ("N", "Natural"),
                        ("T", "Tech"),
                        ("S", "Supernatural"),
                    ],
                ),
                dim!("onset", &[("F", "Foreshadowed"), ("S", "Sudden")]),
                dim!("scope", &[("L", "Limited"), ("W", "Widespread")]),
            ],
            RelationalRealignment => &[
                dim!("symmetry", &[("SY", "Symmetrical"), ("AS", "Asymmetrical")]),
                dim!("alignment", &[("A", "Alignment"), ("D", "Disalignment")]),
                dim!("duration", &[("T", "Temporary"), ("P", "Permanent")]),
            ],
            Diffusion => &[
                dim!("agency", &[("V", "Voluntary"), ("IV", "Involuntary")]),
                dim!("tempo", &[("S", "Sudden"), ("G", "Gradual")]),
                dim!("outcome", &[("R", "Resolution"), ("A", "Attrition")]),
            ],
            WriteLikeX => &[
                dim!(
                    "tradition",
                    &[
                        ("RL", "Realist"),
                        ("MP", "Modernist-Postmodernist"),
                        ("SP", "Speculative"),
                    ],
                ),
                dim!(
                    "gender",
                    &[
                        ("M", "Male"),
                        ("F", "Female"),
                        ("Q", "Queer"),
                        ("MQ", "Male+Queer"),
                        ("FQ", "Female+Queer"),
                    ],
                ),
                dim!(
                    "culture",
                    &[
                        ("EA", "Euro-American"),
                        ("AS", "East Asian"),
                        ("GS", "Global South"),
                    ],
                ),
            ],
            ToneMood => &[
                dim!(
                    "voice",
                    &[
                        ("A(VW)", "Authorial (Virginia Woolf)"),
                        ("A(HM)", "Authorial (Haruki Murakami)"),
                        ("A(JB)", "Authorial (James Baldwin)"),
                        ("A(CA)", "Authorial (Chimamanda Adichie)"),
                        ("A(HK)", "Authorial (Han Kang)"),
                        ("N", "Non-authorial"),
                    ],
                ),
                dim!("focus", &[("I", "Internal"), ("E", "External"), ("B", "Balanced")]),
                dim!("imagery", &[("V", "Vivid"), ("A", "Abstract"), ("B", "Balanced")]),
            ],
            SyntaxSentenceStructure => &[
                dim!("length", &[("C", "Complex"), ("S", "Simple"), ("B", "Balanced")]),
                dim!("grammar", &[("CV", "Conventional"), ("E", "Experimental")]),
                dim!("mode", &[("N", "Narrative"), ("D", "Dialogue"), ("BA", "Balanced")]),
            ],
            TemporalStructure => &[
                dim!(
                    "order",
                    &[("L", "Linear"), ("N", "Nonlinear"), ("FG", "Fragmented")],
                ),
                dim!("pace", &[("C", "Compressed"), ("E", "Expanded")]),
                dim!("tense", &[("P", "Past"), ("R", "Present"), ("F", "Future")]),
            ],
            NarrativePerspective => &[
                dim!(
                    "person",
                    &[("1P", "First person"), ("2P", "Second person"), ("3P", "Third person")],
                ),
                dim!("reliability", &[("R", "Reliable"), ("U", "Unreliable")]),
                dim!("narrators", &[("S", "Single"), ("M", "Multiple")]),
            ],
            Motive => &[
                dim!("drive", &[("D", "Destructive"), ("C", "Constructive")]),
                dim!("awareness", &[("CO", "Conscious"), ("U", "Unconscious")]),
                dim!("coherence", &[("CF", "Conflicted"), ("F", "Focused")]),
            ],
            SocialStatus => &[
                dim!("level", &[("H", "High"), ("M", "Middle"), ("L", "Low")]),
                dim!("origin", &[("E", "Earned"), ("I", "Inherited")]),
                dim!("stability", &[("S", "Stable"), ("U", "Unstable")]),
            ],
            RelationalIdentity => &[
                dim!(
                    "orientation",
                    &[("C", "Cooperative"), ("M", "Competitive"), ("A", "Ambiguous")],
                ),
                dim!("stance", &[("O", "Open"), ("D", "Defensive"), ("W", "Withdrawn")]),
            ],
            CulturalIdentity => &[
                dim!("position", &[("MS", "Mainstream"), ("MG", "Marginalized")]),
                dim!("lineage", &[("M", "Monocultural"), ("H", "Hybrid")]),
                dim!("legibility", &[("L", "Legible"), ("I", "Illegible")]),
            ],
            EmbodiedDifference => &[
                dim!(
                    "marker",
                    &[
                        ("G", "Gender-Marked"),
                        ("D", "Disability-Marked"),
                        ("R", "Race-Marked"),
                        ("A", "Age-Marked"),
                        ("U", "Unmarked"),
                    ],
                ),
                dim!(
                    "reception",
                    &[("AC", "Accepted"), ("SG", "Stigmatized"), ("UR", "Unrecognized")],
                ),
            ],
            TemporalSetting => &[
                REALISM,
                dim!(
                    "era",
                    &[
                        ("AO", "The Age of Origins"),
                        ("WFR", "Worlds of Faith and Rule"),
                        ("WIA", "Worlds in Acceleration"),
                        ("SC", "The Shattered Century"),
                        ("FCN", "The Fully Connected Now"),
                        ("DF", "The Distant Future"),
                        ("BS", "The Broken Sequence"),
                        ("DT", "The Dreamtime"),
                        ("CS", "The Cosmic Scale"),
                        ("CR", "The Cyclic Return"),
                    ],
                ),
            ],
            MacroSpatialSetting => &[
                REALISM,
                dim!(
                    "terrain",
                    &[
                        ("URB", "Urban Built Environments"),
                        ("RUR", "Rural Landscapes"),
                        ("FOR", "Forest Environments"),
                        ("MTN", "Mountain Terrain"),
                        ("DES", "Desert Regions"),
                        ("POL", "Polar Zones"),
                        ("COA", "Aquatic and Coastal Environments"),
                        ("XTR", "Extraterrestrial Terrain"),
                        ("VRT", "Virtual Worlds"),
                        ("MYR", "Otherworldly or Mythic Realms"),
                    ],
                ),
            ],
            MicroSpatialSetting => &[
                REALISM,
                dim!(
                    "space",
                    &[
                        ("DOM", "Domestic Interior Spaces"),
                        ("INS", "Institutional Spaces"),
                        ("SUB", "Subterranean Spaces"),
                        ("TRN", "Transit Hubs"),
                        ("SAC", "Sacred Spaces"),
                        ("COM", "Commercial Spaces"),
                        ("MED", "Medical Spaces"),
                        ("VRI", "Virtual Interiors"),
                        ("DLC", "Dreamlike Chambers"),
                        ("MYS", "Mythic Structures"),
                    ],
                ),
            ],
            SocioPoliticalOrder => &[
                dim!(
                    "authority",
                    &[("C", "Centralized"), ("D", "Distributed"), ("A", "Absent")],
                ),
                dim!("stability", &[("S", "Stable"), ("U", "Unstable")]),
            ],
            CulturalContext => &[dim!(
                "norms",
                &[
                    ("TH", "Theistic"),
                    ("AT", "Atheistic"),
                    ("C", "Collectivist"),
                    ("I", "Individualist"),
                    ("HY", "Hypocritical"),
                    ("TT", "Theatrical"),
                    ("V", "Volatile Norms"),
                    ("AR", "Arbitrary"),
                    ("UQ", "Unquestioned"),
                    ("OB", "Outcome-based"),
                ],
            )],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = fold_name(s);
        Category::ALL
            .into_iter()
            .find(|c| fold_name(c.name()) == wanted)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

fn fold_name(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Identity of one annotation value: category, dimension position and code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AxisKey {
    pub category: Category,
    pub dimension: usize,
    pub code: String,
}

impl AxisKey {
    pub fn label(&self) -> String {
        match self.category.dimensions().get(self.dimension) {
            Some(d) => d.describe(&self.code),
            None => self.code.clone(),
        }
    }
}

impl fmt::Display for AxisKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.category, self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_categories_per_element() {
        for e in Element::ALL {
            assert_eq!(e.categories().count(), 5, "{e}");
        }
    }

    #[test]
    fn category_names_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.name().parse::<Category>().unwrap(), c);
        }
        assert_eq!("tone and mood".parse::<Category>().ok(), None);
        assert_eq!("Socio-Political order".parse::<Category>().unwrap(), Category::SocioPoliticalOrder);
    }

    #[test]
    fn default_baselines_are_alphabetical_first() {
        assert_eq!(Category::default_baseline(Element::Event), Category::Diffusion);
        assert_eq!(
            Category::default_baseline(Element::Style),
            Category::NarrativePerspective
        );
        assert_eq!(
            Category::default_baseline(Element::Character),
            Category::CulturalIdentity
        );
        assert_eq!(
            Category::default_baseline(Element::Setting),
            Category::CulturalContext
        );
    }

    #[test]
    fn connection_codes() {
        let d = Category::Reorientation.dimensions()[2];
        assert!(d.accepts("N"));
        assert!(d.accepts("C9"));
        assert!(!d.accepts("C0"));
        assert!(!d.accepts("C51"));
        assert_eq!(d.describe("C9"), "Connected (E9)");
    }
}
