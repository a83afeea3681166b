//! Prompt templates with `{input}` / `{target}` placeholders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INPUT: &str = "{input}";
pub const TARGET: &str = "{target}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub demo_pattern: String,
    pub query_pattern: String,
    pub joiner: String,
}

impl TemplateSpec {
    pub fn new(
        demo_pattern: impl Into<String>,
        query_pattern: impl Into<String>,
        joiner: impl Into<String>,
    ) -> Self {
        Self {
            demo_pattern: demo_pattern.into(),
            query_pattern: query_pattern.into(),
            joiner: joiner.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        expect_once(&self.demo_pattern, INPUT, "demo_pattern")?;
        expect_once(&self.demo_pattern, TARGET, "demo_pattern")?;
        expect_once(&self.query_pattern, INPUT, "query_pattern")?;
        if self.query_pattern.contains(TARGET) {
            return Err(Error::Template(format!(
                "query_pattern must not contain {TARGET}: {:?}",
                self.query_pattern
            )));
        }
        Ok(())
    }

    /// Demonstration text: `demo_pattern` with both placeholders substituted.
    pub fn render_demo(&self, input: &str, target: &str) -> Result<String> {
        expect_once(&self.demo_pattern, INPUT, "demo_pattern")?;
        expect_once(&self.demo_pattern, TARGET, "demo_pattern")?;
        Ok(fill(&self.demo_pattern, input, Some(target)))
    }

    pub fn render_query(&self, input: &str) -> Result<String> {
        expect_once(&self.query_pattern, INPUT, "query_pattern")?;
        Ok(fill(&self.query_pattern, input, None))
    }
}

fn expect_once(pattern: &str, placeholder: &str, field: &str) -> Result<()> {
    match pattern.matches(placeholder).count() {
        1 => Ok(()),
        0 => Err(Error::Template(format!(
            "{field} {pattern:?} is missing {placeholder}"
        ))),
        n => Err(Error::Template(format!(
            "{field} {pattern:?} contains {placeholder} {n} times"
        ))),
    }
}

// Single left-to-right pass over the pattern so that placeholder-like text
// inside the substituted values is never expanded.
fn fill(pattern: &str, input: &str, target: Option<&str>) -> String {
    let mut out = String::with_capacity(pattern.len() + input.len() + target.map_or(0, str::len));
    let mut rest = pattern;
    loop {
        let next_input = rest.find(INPUT);
        let next_target = target.and_then(|_| rest.find(TARGET));
        let (at, len, value) = match (next_input, next_target) {
            (Some(i), Some(t)) if t < i => (t, TARGET.len(), target.unwrap_or_default()),
            (Some(i), _) => (i, INPUT.len(), input),
            (None, Some(t)) => (t, TARGET.len(), target.unwrap_or_default()),
            (None, None) => {
                out.push_str(rest);
                return out;
            }
        };
        out.push_str(&rest[..at]);
        out.push_str(value);
        rest = &rest[at + len..];
    }
}
