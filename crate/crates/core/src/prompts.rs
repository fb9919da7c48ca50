//! Prompt catalog. Every prompt is a data file under `prompts/` compiled into
//! the binary; `{name}` marks a placeholder, anything else (including `{{`)
//! is literal text.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
    pub placeholders: &'static [&'static str],
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template `{template}` needs a value for `{placeholder}`")]
    MissingValue {
        template: &'static str,
        placeholder: &'static str,
    },
    #[error("template `{template}` has no placeholder `{placeholder}`")]
    UnknownPlaceholder {
        template: &'static str,
        placeholder: String,
    },
}

macro_rules! template {
    ($konst:ident, $file:literal, [$($ph:literal),*]) => {
        pub const $konst: Template = Template {
            name: $file,
            text: include_str!(concat!("../prompts/", $file, ".txt")),
            placeholders: &[$($ph),*],
        };
    };
}

template!(PLANNER, "planner", []);
template!(ASSISTANT, "assistant", []);
template!(ONTOLOGIST, "ontologist", []);
template!(SCIENTIST_1, "scientist_1", []);
template!(SCIENTIST_2, "scientist_2", []);
template!(CRITIC, "critic", []);
template!(NOVELTY_ASSISTANT, "novelty_assistant", []);
template!(PIPELINE_ONTOLOGIST_SYSTEM, "pipeline_ontologist_system", []);
template!(PIPELINE_ONTOLOGIST, "pipeline_ontologist", ["path_string"]);
template!(PIPELINE_SCIENTIST_SYSTEM, "pipeline_scientist_system", []);
template!(
    PIPELINE_PROPOSAL,
    "pipeline_proposal",
    ["path_string", "definitions"]
);
template!(
    PIPELINE_EXPANSION,
    "pipeline_expansion",
    ["field", "content"]
);
template!(PIPELINE_CRITIC_SYSTEM, "pipeline_critic_system", []);
template!(PIPELINE_CRITIQUE, "pipeline_critique", ["draft"]);
template!(PIPELINE_MODELING, "pipeline_modeling", ["draft"]);
template!(PIPELINE_SYNBIO, "pipeline_synbio", ["draft"]);
template!(JSON_REPAIR, "json_repair", ["problem"]);
template!(MANAGER_SYSTEM, "manager_system", ["roles"]);
template!(
    MANAGER_SELECT,
    "manager_select",
    ["conversation", "role_names"]
);
template!(NOVELTY_TASK, "novelty_task", ["proposal"]);
template!(NOVELTY_REASK, "novelty_reask", ["problem"]);
template!(DEFAULT_TASK, "default_task", []);

pub const ALL: &[Template] = &[
    PLANNER,
    ASSISTANT,
    ONTOLOGIST,
    SCIENTIST_1,
    SCIENTIST_2,
    CRITIC,
    NOVELTY_ASSISTANT,
    PIPELINE_ONTOLOGIST_SYSTEM,
    PIPELINE_ONTOLOGIST,
    PIPELINE_SCIENTIST_SYSTEM,
    PIPELINE_PROPOSAL,
    PIPELINE_EXPANSION,
    PIPELINE_CRITIC_SYSTEM,
    PIPELINE_CRITIQUE,
    PIPELINE_MODELING,
    PIPELINE_SYNBIO,
    JSON_REPAIR,
    MANAGER_SYSTEM,
    MANAGER_SELECT,
    NOVELTY_TASK,
    NOVELTY_REASK,
    DEFAULT_TASK,
];

pub fn by_name(name: &str) -> Option<Template> {
    ALL.iter().copied().find(|t| t.name == name)
}

impl Template {
    /// Substitutes every declared placeholder in a single pass, so values
    /// that themselves contain `{...}` are never re-expanded.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        for (k, _) in values {
            if !self.placeholders.contains(k) {
                return Err(PromptError::UnknownPlaceholder {
                    template: self.name,
                    placeholder: k.to_string(),
                });
            }
        }
        let lookup = |name: &str| values.iter().find(|(k, _)| *k == name).map(|(_, v)| *v);
        for ph in self.placeholders {
            if lookup(ph).is_none() {
                return Err(PromptError::MissingValue {
                    template: self.name,
                    placeholder: ph,
                });
            }
        }

        let mut out = String::with_capacity(
            self.text.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>(),
        );
        let mut rest = self.text;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let hit = after.find('}').and_then(|close| {
                let name = &after[..close];
                self.placeholders
                    .contains(&name)
                    .then(|| (lookup(name).expect("checked above"), close))
            });
            match hit {
                Some((value, close)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }

    /// Text of a template without placeholders.
    pub fn plain(&self) -> &'static str {
        debug_assert!(
            self.placeholders.is_empty(),
            "{} has placeholders",
            self.name
        );
        self.text
    }
}
