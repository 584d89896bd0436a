//! Rendering selected exemplars and the test query into a prompt.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::greedy::SelectionResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptOrder {
    #[default]
    GainDescending,
    GainAscending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// Must contain `{query}` and `{answer}` exactly once each.
    pub exemplar_template: String,
    /// Must contain `{query}` exactly once.
    pub query_template: String,
    pub separator: String,
    pub order: PromptOrder,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            exemplar_template: "Input: {query}\nOutput: {answer}".into(),
            query_template: "Input: {query}\nOutput:".into(),
            separator: "\n\n".into(),
            order: PromptOrder::GainDescending,
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        let once = |t: &str, p: &str, which: &str| {
            let c = t.matches(p).count();
            if c == 1 {
                Ok(())
            } else {
                Err(Error::Invalid(format!(
                    "{which} must contain {p} exactly once, found {c}"
                )))
            }
        };
        once(&self.exemplar_template, "{query}", "exemplar template")?;
        once(&self.exemplar_template, "{answer}", "exemplar template")?;
        once(&self.query_template, "{query}", "query template")?;
        if self.query_template.contains("{answer}") {
            return Err(Error::Invalid("query template must not contain {answer}".into()));
        }
        Ok(())
    }
}

/// Substitutes placeholders in one pass, so values containing braces are left alone.
fn render(template: &str, query: &str, answer: Option<&str>) -> String {
    let mut out = String::with_capacity(template.len() + query.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        if let Some(t) = tail.strip_prefix("{query}") {
            out.push_str(query);
            rest = t;
        } else if let (Some(t), Some(a)) = (tail.strip_prefix("{answer}"), answer) {
            out.push_str(a);
            rest = t;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// Concatenates the rendered exemplars in the configured order, then the rendered query.
pub fn assemble_prompt(
    template: &PromptTemplate,
    selection: &SelectionResult,
    pool: &Corpus,
    query_text: &str,
) -> Result<String> {
    template.validate()?;
    let mut picks: Vec<_> = selection.selected.iter().collect();
    picks.sort_by(|a, b| b.gain.total_cmp(&a.gain));
    if template.order == PromptOrder::GainAscending {
        picks.reverse();
    }
    let mut parts = Vec::with_capacity(picks.len() + 1);
    for pick in picks {
        let item = pool
            .position(&pick.id)
            .map(|i| &pool.items()[i])
            .ok_or_else(|| Error::Invalid(format!("selected id {:?} is not in the pool", pick.id)))?;
        let missing = |field| Error::Invalid(format!("exemplar {:?} has no {field}", pick.id));
        let text = item.text.as_deref().ok_or_else(|| missing("text"))?;
        let answer = item.answer.as_deref().ok_or_else(|| missing("answer"))?;
        parts.push(render(&template.exemplar_template, text, Some(answer)));
    }
    parts.push(render(&template.query_template, query_text, None));
    Ok(parts.join(&template.separator))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusItem;
    use crate::greedy::{SelectedItem, SelectionMode};

    fn pool() -> Corpus {
        let item = |id: &str, t: &str, a: &str, v: Vec<f64>| CorpusItem {
            id: id.into(),
            vector: v,
            text: Some(t.into()),
            answer: Some(a.into()),
        };
        Corpus::new(vec![
            item("a", "two plus two", "four", vec![1.0, 0.0]),
            item("b", "{answer} literal", "yes", vec![0.0, 1.0]),
        ])
        .unwrap()
    }

    fn selection(picks: &[(&str, f64)]) -> SelectionResult {
        SelectionResult {
            mode: SelectionMode::Retrieve,
            budget: picks.len().max(1),
            selected: picks
                .iter()
                .enumerate()
                .map(|(index, (id, gain))| SelectedItem {
                    id: id.to_string(),
                    index,
                    gain: *gain,
                })
                .collect(),
            objective_value: picks.iter().map(|p| p.1).sum(),
        }
    }

    #[test]
    fn zero_shot_is_just_the_query() {
        let t = PromptTemplate::default();
        let p = assemble_prompt(&t, &selection(&[]), &pool(), "what?").unwrap();
        assert_eq!(p, "Input: what?\nOutput:");
    }

    #[test]
    fn order_follows_gains() {
        let mut t = PromptTemplate::default();
        let sel = selection(&[("b", 0.3), ("a", 0.9)]);
        let p = assemble_prompt(&t, &sel, &pool(), "q").unwrap();
        assert!(p.find("two plus two").unwrap() < p.find("literal").unwrap());
        assert_eq!(p.matches("\n\n").count(), 2);
        assert!(p.contains("Input: {answer} literal\nOutput: yes"));
        t.order = PromptOrder::GainAscending;
        let p = assemble_prompt(&t, &sel, &pool(), "q").unwrap();
        assert!(p.find("two plus two").unwrap() > p.find("literal").unwrap());
    }

    #[test]
    fn template_and_pool_errors() {
        let bad = PromptTemplate {
            exemplar_template: "{query} {query} {answer}".into(),
            ..PromptTemplate::default()
        };
        assert!(bad.validate().is_err());
        let mut p = pool();
        p = Corpus::new(
            p.items()
                .iter()
                .cloned()
                .map(|mut i| {
                    i.answer = None;
                    i
                })
                .collect(),
        )
        .unwrap();
        let err = assemble_prompt(&PromptTemplate::default(), &selection(&[("a", 1.0)]), &p, "q");
        assert!(err.is_err());
    }
}
