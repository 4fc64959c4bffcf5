//! JSON reports with sorted keys, and CSV tables at full precision.

use num_complex::Complex64;
use serde_json::{json, Value};

/// Finite numbers as JSON numbers, anything else as `null`.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn opt_num(x: Option<f64>) -> Value {
    x.map(num).unwrap_or(Value::Null)
}

pub fn complex(z: Complex64) -> Value {
    json!({ "re": num(z.re), "im": num(z.im) })
}

pub fn opt_complex(z: Option<Complex64>) -> Value {
    z.map(complex).unwrap_or(Value::Null)
}

pub fn nums<'a>(xs: impl IntoIterator<Item = &'a f64>) -> Value {
    Value::Array(xs.into_iter().map(|x| num(*x)).collect())
}

/// Pretty JSON with a trailing newline. `serde_json` keeps object keys in a
/// sorted map, so equal reports are byte-identical.
pub fn to_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values are serialisable");
    s.push('\n');
    s
}

/// 17 significant digits, enough to recover every `f64` exactly.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Empty field for absent or non-finite values.
pub fn field(x: Option<f64>) -> String {
    x.filter(|v| v.is_finite()).map(fmt17).unwrap_or_default()
}

/// Header plus rows; `footer` lines are appended as `# ` comments.
pub fn csv_table(header: &[&str], rows: &[Vec<String>], footer: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    let mut s = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output");
    for f in footer {
        s.push_str("# ");
        s.push_str(f);
        s.push('\n');
    }
    s
}
