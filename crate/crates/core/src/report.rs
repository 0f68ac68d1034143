//! Run reports: pass/fail checks plus named values, rendered as plain text
//! (5 significant digits) or JSON (full precision).

use std::fmt::Write as _;

use serde::Serialize;

/// Formats `v` with 5 significant digits.
pub fn sig5(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-3..5).contains(&exp) {
        let decimals = (4 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        // rounding may carry into a new digit (e.g. 9.99996 -> 10.0000)
        if s.trim_start_matches('-')
            .replace('.', "")
            .trim_start_matches('0')
            .len()
            > 5
            && decimals > 0
        {
            let d = decimals - 1;
            return format!("{v:.d$}");
        }
        s
    } else {
        format!("{v:.4e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Count(usize),
    Number(f64),
    Numbers(Vec<f64>),
    Text(String),
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Bool(b) => b.to_string(),
            Value::Count(n) => n.to_string(),
            Value::Number(v) => sig5(*v),
            Value::Numbers(vs) => format!(
                "[{}]",
                vs.iter().map(|v| sig5(*v)).collect::<Vec<_>>().join(", ")
            ),
            Value::Text(s) => s.clone(),
        }
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Count(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Number(v)
    }
}

impl From<Vec<f64>> for Value {
    fn from(v: Vec<f64>) -> Self {
        Value::Numbers(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.into())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub values: Vec<(String, Value)>,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
            values: Vec::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.values.push((key.into(), value.into()));
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub title: String,
    pub checks: Vec<Check>,
    pub values: Vec<(String, Value)>,
}

impl RunReport {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            checks: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn check(&mut self, check: Check) -> &mut Self {
        self.checks.push(check);
        self
    }

    pub fn value(&mut self, key: impl Into<String>, value: impl Into<Value>) -> &mut Self {
        self.values.push((key.into(), value.into()));
        self
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("{}\n", self.title);
        for (k, v) in &self.values {
            writeln!(out, "  {k}: {}", v.render()).unwrap();
        }
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            write!(out, "[{tag}] {}", c.name).unwrap();
            if !c.detail.is_empty() {
                write!(out, ": {}", c.detail).unwrap();
            }
            out.push('\n');
            for (k, v) in &c.values {
                writeln!(out, "    {k}: {}", v.render()).unwrap();
            }
        }
        out
    }

    pub fn render_json(&self) -> String {
        #[derive(Serialize)]
        struct JsonCheck<'a> {
            name: &'a str,
            passed: bool,
            detail: &'a str,
            values: serde_json::Map<String, serde_json::Value>,
        }
        let map = |pairs: &[(String, Value)]| {
            pairs
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        serde_json::to_value(v).expect("report values serialize"),
                    )
                })
                .collect::<serde_json::Map<_, _>>()
        };
        let doc = serde_json::json!({
            "title": self.title,
            "passed": self.passed(),
            "values": map(&self.values),
            "checks": self.checks.iter().map(|c| JsonCheck {
                name: &c.name,
                passed: c.passed,
                detail: &c.detail,
                values: map(&c.values),
            }).collect::<Vec<_>>(),
        });
        serde_json::to_string_pretty(&doc).expect("report serialization cannot fail")
    }
}
