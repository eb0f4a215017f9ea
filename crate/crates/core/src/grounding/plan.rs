//! Plan files: one `(action-name obj1 obj2 ...)` per line, lowercase.

use thiserror::Error;

use super::GroundTask;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("plan line {line}: {message}")]
pub struct PlanParseError {
    pub line: usize,
    pub message: String,
}

pub fn format_plan(task: &GroundTask, plan: &[usize]) -> String {
    let mut out = String::new();
    for &uid in plan {
        out.push_str(&task.action_name(task.action(uid)).to_lowercase());
        out.push('\n');
    }
    out
}

/// Resolves each plan line to a ground-action uid. Names are matched
/// case-insensitively; blank lines and `;` comments are skipped.
pub fn parse_plan(task: &GroundTask, text: &str) -> Result<Vec<usize>, PlanParseError> {
    let mut plan = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split(';').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| PlanParseError { line: i + 1, message };
        let inner = line
            .strip_prefix('(')
            .and_then(|l| l.strip_suffix(')'))
            .ok_or_else(|| err("expected `(action args...)`".into()))?;
        let mut words = inner.split_whitespace();
        let name = words.next().ok_or_else(|| err("missing action name".into()))?;
        let schema = task
            .domain
            .actions
            .iter()
            .position(|a| a.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| err(format!("unknown action `{name}`")))?;
        let binding = words
            .map(|w| {
                task.problem
                    .objects
                    .iter()
                    .position(|o| o.name.eq_ignore_ascii_case(w))
                    .ok_or_else(|| err(format!("unknown object `{w}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let uid = task
            .find_action(schema, &binding)
            .ok_or_else(|| err(format!("`{line}` is not a ground action of this task")))?;
        plan.push(uid);
    }
    Ok(plan)
}
