//! Prompt scripts: an ordered list of frame-0 prompts for headless runs.
//!
//! ```toml
//! [[prompt]]
//! kind = "point"
//! x = 40
//! y = 32
//! polarity = "positive"
//!
//! [[prompt]]
//! kind = "box"
//! box = { x_min = 4, y_min = 4, x_max = 20, y_max = 18 }
//!
//! [[prompt]]
//! kind = "text"
//! phrase = "disc"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Prompt;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read prompt script {0}")]
    Io(String),
    #[error("malformed prompt script: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptScript {
    #[serde(default, rename = "prompt")]
    pub prompts: Vec<Prompt>,
}

impl PromptScript {
    pub fn from_toml(text: &str) -> Result<Self, ScriptError> {
        toml::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("prompt scripts always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BoxPrompt, PointPrompt, TextPrompt};
    use crate::mask::BoundingBox;

    #[test]
    fn parses_every_kind() {
        let text = r#"
[[prompt]]
kind = "point"
x = 40
y = 32
polarity = "positive"

[[prompt]]
kind = "points"
points = [{ x = 1, y = 2, polarity = "positive" }, { x = 3, y = 4, polarity = "negative" }]

[[prompt]]
kind = "box"
box = { x_min = 4, y_min = 4, x_max = 20, y_max = 18 }

[[prompt]]
kind = "text"
phrase = "disc"
"#;
        let s = PromptScript::from_toml(text).unwrap();
        assert_eq!(
            s.prompts,
            vec![
                Prompt::Point(PointPrompt::positive(40, 32)),
                Prompt::Points {
                    points: vec![PointPrompt::positive(1, 2), PointPrompt::negative(3, 4)]
                },
                Prompt::Box(BoxPrompt {
                    bbox: BoundingBox::new(4, 4, 20, 18)
                }),
                Prompt::Text(TextPrompt::new("disc", 0.35)),
            ]
        );
        assert_eq!(PromptScript::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn rejects_unknown_kind() {
        let err = PromptScript::from_toml("[[prompt]]\nkind = \"stroke\"\n").unwrap_err();
        assert!(matches!(err, ScriptError::Parse(_)));
    }
}
