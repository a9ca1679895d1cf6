//! Generation and self-refine prompt templates.
//!
//! Templates are plain UTF-8 text with `{placeholder}` markers. Only the known
//! placeholder names are substituted, in a single pass, so braces elsewhere in
//! a template (or inside substituted code) are left untouched.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::{CodeBlock, FailureKind, ProblemSpec, Reward};

pub const GENERATION_PLACEHOLDERS: &[&str] = &["nl_description", "context"];
pub const REFINE_PLACEHOLDERS: &[&str] = &["nl_description", "context", "line", "supplement", "failure_summary"];

const DEFAULT_GENERATION: &str = "\
You are completing a Python program.

Problem:
{nl_description}

Program so far:
```python
{context}
```

Complete the program. Continue directly after the last line above and write every remaining line. Reply with code only.
";

const DEFAULT_REFINE: &str = "\
You are fixing a Python program.

Problem:
{nl_description}

The program below fails its tests: {failure_summary}

```python
{context}
{line}
{supplement}
```

The first line after the function prefix is the suspected fault. Rewrite the program from that line onward. Keep the prefix unchanged, do not repeat it, and reply with the replacement lines only.
";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("placeholder {{{name}}} appears {count} times in the {template} template (expected exactly once)")]
    Placeholder {
        template: &'static str,
        name: &'static str,
        count: usize,
    },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    generation_template: String,
    refine_template: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            generation_template: DEFAULT_GENERATION.to_string(),
            refine_template: DEFAULT_REFINE.to_string(),
        }
    }
}

fn check(template: &str, which: &'static str, names: &'static [&'static str]) -> Result<(), PromptError> {
    for name in names {
        let count = template.matches(&format!("{{{name}}}")).count();
        if count != 1 {
            return Err(PromptError::Placeholder {
                template: which,
                name,
                count,
            });
        }
    }
    Ok(())
}

fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            values.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
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
    out
}

impl PromptTemplates {
    pub fn new(
        generation_template: impl Into<String>,
        refine_template: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let templates = Self {
            generation_template: generation_template.into(),
            refine_template: refine_template.into(),
        };
        check(&templates.generation_template, "generation", GENERATION_PLACEHOLDERS)?;
        check(&templates.refine_template, "refine", REFINE_PLACEHOLDERS)?;
        Ok(templates)
    }

    pub fn from_files(generation: &Path, refine: &Path) -> Result<Self, PromptError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|source| PromptError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        Self::new(read(generation)?, read(refine)?)
    }

    pub fn generation_template(&self) -> &str {
        &self.generation_template
    }

    pub fn refine_template(&self) -> &str {
        &self.refine_template
    }

    /// `context_lines` already starts with the problem's starter context.
    pub fn build_generation_prompt(&self, problem: &ProblemSpec, context_lines: &[String]) -> String {
        let context = context_lines.join("\n");
        render(
            &self.generation_template,
            &[("nl_description", &problem.nl_description), ("context", &context)],
        )
    }

    pub fn build_refine_prompt(&self, problem: &ProblemSpec, block: &CodeBlock, failure: &Reward) -> String {
        let context = block.context.join("\n");
        let supplement = block.supplement.join("\n");
        let summary = failure_summary(failure);
        render(
            &self.refine_template,
            &[
                ("nl_description", &problem.nl_description),
                ("context", &context),
                ("line", &block.line),
                ("supplement", &supplement),
                ("failure_summary", &summary),
            ],
        )
    }
}

pub fn failure_summary(reward: &Reward) -> String {
    let counts = format!("{}/{} public tests passed", reward.passed(), reward.total());
    match reward.failure_kind() {
        FailureKind::None => format!("{counts}; all tests pass but the program may still be improved"),
        FailureKind::TestFailure => format!("{counts}; {} assertion(s) failed", reward.total() - reward.passed()),
        FailureKind::RuntimeError => format!("{counts}; the program raised a runtime error"),
        FailureKind::ParseError => format!("{counts}; the program does not parse (syntax error)"),
        FailureKind::Timeout => format!("{counts}; the program timed out before finishing"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TestCase;

    fn problem() -> ProblemSpec {
        ProblemSpec {
            task_id: "t".into(),
            nl_description: "Return {a} doubled.".into(),
            starter_context: vec!["def f(a):".into()],
            public_tests: vec![TestCase::new("assert f(1) == 2")],
            private_tests: vec![],
            entry_point: "f".into(),
            synthetic_grammar: None,
        }
    }

    #[test]
    fn default_templates_are_valid() {
        let t = PromptTemplates::default();
        assert!(PromptTemplates::new(t.generation_template(), t.refine_template()).is_ok());
    }

    #[test]
    fn placeholder_count_is_enforced() {
        let err = PromptTemplates::new("{nl_description}", "x").unwrap_err();
        assert!(matches!(
            err,
            PromptError::Placeholder {
                name: "context",
                count: 0,
                ..
            }
        ));
        let err = PromptTemplates::new("{nl_description}{context}{context}", DEFAULT_REFINE).unwrap_err();
        assert!(matches!(
            err,
            PromptError::Placeholder {
                name: "context",
                count: 2,
                ..
            }
        ));
    }

    #[test]
    fn generation_prompt_with_only_starter_context() {
        let t = PromptTemplates::new(
            "P:{nl_description}|C:{context}",
            "{nl_description}{context}{line}{supplement}{failure_summary}",
        )
        .unwrap();
        let p = problem();
        assert_eq!(
            t.build_generation_prompt(&p, &p.starter_context),
            "P:Return {a} doubled.|C:def f(a):"
        );
    }

    #[test]
    fn generation_prompt_keeps_lines_in_order() {
        let t = PromptTemplates::default();
        let ctx: Vec<String> = vec![
            "def f(a):".into(),
            "    x = a".into(),
            "    y = x * 2".into(),
            "    return y".into(),
        ];
        let prompt = t.build_generation_prompt(&problem(), &ctx);
        assert!(prompt.contains("def f(a):\n    x = a\n    y = x * 2\n    return y"));
        assert_eq!(prompt, t.build_generation_prompt(&problem(), &ctx));
    }

    #[test]
    fn substituted_text_is_not_rescanned() {
        let out = render("{a}-{b}-{c}", &[("a", "{b}"), ("b", "B")]);
        assert_eq!(out, "{b}-B-{c}");
        assert_eq!(render("{unclosed", &[("unclosed", "x")]), "{unclosed");
    }

    #[test]
    fn refine_prompt_summarises_failure() {
        let t = PromptTemplates::default();
        let block = CodeBlock {
            context: vec!["def f(a):".into()],
            line: "    return a + 1".into(),
            supplement: vec![],
        };
        let partial = Reward::from_counts(1, 2, FailureKind::TestFailure).unwrap();
        let prompt = t.build_refine_prompt(&problem(), &block, &partial);
        assert!(prompt.contains("1/2"));
        assert!(prompt.contains("    return a + 1"));
        assert_eq!(prompt, t.build_refine_prompt(&problem(), &block, &partial));

        let timeout = Reward::zero(2, FailureKind::Timeout).unwrap();
        assert!(t
            .build_refine_prompt(&problem(), &block, &timeout)
            .contains("timed out"));
    }
}
