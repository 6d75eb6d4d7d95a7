//! Prompt templates with a `[CLS]` slot, plus the two grasp phrases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLS_SLOT: &str = "[CLS]";

pub const DEFAULT_TEMPLATES: [&str; 6] = [
    "This is an image of [CLS]",
    "This is a touch image of [CLS]",
    "This looks like [CLS]",
    "This feels like [CLS]",
    "Image of [CLS]",
    "Touch of [CLS]",
];

/// Visual template paired with its haptic rewording.
pub const TEMPLATE_PAIRS: [(&str, &str); 3] = [
    ("This is an image of [CLS]", "This is a touch image of [CLS]"),
    ("This looks like [CLS]", "This feels like [CLS]"),
    ("Image of [CLS]", "Touch of [CLS]"),
];

pub const GRASP_STABLE_PHRASE: &str = "the object is lifted in the air";
pub const GRASP_SLIP_PHRASE: &str = "the object is falling on the ground";

/// Haptic phrasing mentions feeling or touching.
pub fn is_haptic(template: &str) -> bool {
    let t = template.to_lowercase();
    t.contains("feel") || t.contains("touch")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraspLabel {
    Stable,
    Slip,
}

impl GraspLabel {
    pub fn index(self) -> usize {
        match self {
            GraspLabel::Stable => 0,
            GraspLabel::Slip => 1,
        }
    }

    pub fn from_stable(stable: bool) -> Self {
        if stable {
            GraspLabel::Stable
        } else {
            GraspLabel::Slip
        }
    }
}

/// A prompt resolved against the registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedPrompt {
    Class { template: String, class_name: String },
    Grasp(GraspLabel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplateRegistry {
    templates: Vec<String>,
    grasp_phrases: [String; 2],
}

impl Default for PromptTemplateRegistry {
    fn default() -> Self {
        Self {
            templates: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            grasp_phrases: [GRASP_STABLE_PHRASE.into(), GRASP_SLIP_PHRASE.into()],
        }
    }
}

impl PromptTemplateRegistry {
    pub fn register(&mut self, template: &str) -> Result<()> {
        if template.matches(CLS_SLOT).count() != 1 {
            return Err(Error::InvalidArgument(format!(
                "template {template:?} must contain exactly one {CLS_SLOT} slot"
            )));
        }
        if !self.contains(template) {
            self.templates.push(template.to_string());
        }
        Ok(())
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    pub fn contains(&self, template: &str) -> bool {
        self.templates.iter().any(|t| t == template)
    }

    pub fn grasp_phrase(&self, label: GraspLabel) -> &str {
        &self.grasp_phrases[label.index()]
    }

    /// Fills the slot. The class name may be given bare or in brackets.
    pub fn fill(&self, template: &str, class_name: &str) -> Result<String> {
        if !self.contains(template) {
            return Err(Error::UnknownTemplate(template.to_string()));
        }
        Ok(template.replace(CLS_SLOT, class_name))
    }

    /// Splits a concrete prompt back into template and class name.
    pub fn parse(&self, prompt: &str) -> Result<ParsedPrompt> {
        let prompt = prompt.trim();
        for (i, phrase) in self.grasp_phrases.iter().enumerate() {
            if prompt.eq_ignore_ascii_case(phrase) {
                return Ok(ParsedPrompt::Grasp(if i == 0 {
                    GraspLabel::Stable
                } else {
                    GraspLabel::Slip
                }));
            }
        }
        for t in &self.templates {
            let (prefix, suffix) = t.split_once(CLS_SLOT).expect("validated on register");
            if prompt.len() > prefix.len() + suffix.len()
                && prompt.starts_with(prefix)
                && prompt.ends_with(suffix)
            {
                let name = prompt[prefix.len()..prompt.len() - suffix.len()].trim();
                let name = name
                    .strip_prefix('[')
                    .and_then(|n| n.strip_suffix(']'))
                    .unwrap_or(name);
                return Ok(ParsedPrompt::Class {
                    template: t.clone(),
                    class_name: name.to_string(),
                });
            }
        }
        Err(Error::UnknownTemplate(prompt.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_have_one_slot_each() {
        let r = PromptTemplateRegistry::default();
        assert_eq!(r.templates().len(), 6);
        for t in r.templates() {
            assert_eq!(t.matches(CLS_SLOT).count(), 1);
        }
    }

    #[test]
    fn haptic_detection() {
        for (visual, haptic) in TEMPLATE_PAIRS {
            assert!(!is_haptic(visual));
            assert!(is_haptic(haptic));
        }
    }

    #[test]
    fn parses_bracketed_and_bare_names() {
        let r = PromptTemplateRegistry::default();
        let want = ParsedPrompt::Class {
            template: "This feels like [CLS]".into(),
            class_name: "wood".into(),
        };
        assert_eq!(r.parse("This feels like [wood]").unwrap(), want);
        assert_eq!(r.parse("This feels like wood").unwrap(), want);
        assert_eq!(
            r.parse("the object is lifted in the air").unwrap(),
            ParsedPrompt::Grasp(GraspLabel::Stable)
        );
        assert!(matches!(r.parse("A photo of wood"), Err(Error::UnknownTemplate(_))));
    }

    #[test]
    fn register_rejects_missing_slot() {
        let mut r = PromptTemplateRegistry::default();
        assert!(r.register("no slot here").is_err());
        assert!(r.register("[CLS] and [CLS]").is_err());
        r.register("Touching [CLS]").unwrap();
        assert!(r.contains("Touching [CLS]"));
    }
}
