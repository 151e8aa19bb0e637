use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

const BASIC: &str = "You are a writer. Your task is to write narratives when requested. Your goal is to write complete narratives that fulfill the given requirements.";

const QUALITY: &str = "You are a highly skilled writer known for technical excellence and flawless execution of storytelling fundamentals. You write stories with precise character development, well-structured plots, polished prose, and carefully integrated themes. Your goal is to write stories of the highest quality through careful refinement and technical mastery.";

const CREATIVITY: &str = "You are an innovative writer celebrated for creating completely original and unexpected narratives. You excel at breaking conventional storytelling rules and exploring new creative possibilities. Your strength lies in developing unique characters, unusual plot structures, or experimental styles that surprise readers. Your goal is to create narratives that are unlike anything that has been written before, pushing the boundaries of what stories can be through creative experimentation.";

/// Authorial persona assigned through the system prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Persona {
    Basic,
    Quality,
    Creativity,
}

impl Persona {
    pub const ALL: [Persona; 3] = [Persona::Basic, Persona::Quality, Persona::Creativity];

    pub fn system_text(self) -> &'static str {
        match self {
            Persona::Basic => BASIC,
            Persona::Quality => QUALITY,
            Persona::Creativity => CREATIVITY,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Persona::Basic => "basic",
            Persona::Quality => "quality",
            Persona::Creativity => "creativity",
        }
    }
}

impl fmt::Display for Persona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Persona {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "basic" => Ok(Persona::Basic),
            "quality" | "quality-focused" => Ok(Persona::Quality),
            "creativity" | "creativity-focused" => Ok(Persona::Creativity),
            _ => Err(format!("unknown persona `{s}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texts_are_distinct_and_parse() {
        assert!(Persona::Creativity
            .system_text()
            .contains("completely original and unexpected narratives"));
        assert!(Persona::Quality.system_text().contains("technical excellence"));
        for p in Persona::ALL {
            assert_eq!(p.code().parse::<Persona>().unwrap(), p);
        }
        assert_eq!("Quality-focused".parse::<Persona>().unwrap(), Persona::Quality);
    }
}
