//! Deterministic report emission. Floating-point values are printed with a
//! fixed 17-significant-digit scientific format so identical inputs give
//! byte-identical files on any platform; JSON objects print their keys in
//! sorted order for the same reason.

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::flow::Trajectory;

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serializes any report as deterministic JSON: sorted keys, fixed float
/// format, two-space indentation. Non-finite floats become `null` (JSON has
/// no spelling for them); finite values always print in full.
pub fn to_json_17<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)
        .map_err(|e| Error::Numerical(format!("report serialization: {e}")))?;
    let mut out = String::new();
    write_value(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(x) = n.as_f64().filter(|_| n.is_f64()) {
                out.push_str(&fmt_f64(x));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => {
            // serde_json's escaping, nothing platform-dependent in it.
            out.push_str(&serde_json::to_string(s).expect("string to json"));
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                push_indent(indent + 1, out);
                write_value(item, indent + 1, out);
            }
            out.push('\n');
            push_indent(indent, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            // serde_json's default map is a BTreeMap; iteration is sorted.
            for (i, (k, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                push_indent(indent + 1, out);
                out.push_str(&serde_json::to_string(k).expect("key to json"));
                out.push_str(": ");
                write_value(item, indent + 1, out);
            }
            out.push('\n');
            push_indent(indent, out);
            out.push('}');
        }
    }
}

fn push_indent(indent: usize, out: &mut String) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}

/// Fixed column order:
/// `t, x_0..x_{r-1}, m_t, c_t, osc_h, hess_sup, mass, coverage,
///  u_<k> (one column per configured sublevel index), conv_res, wall_gap,
///  hess_min_eig, weyl_res`.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::new();
    out.push('t');
    for i in 0..traj.dim {
        out.push_str(&format!(",x_{i}"));
    }
    out.push_str(",m_t,c_t,osc_h,hess_sup,mass,coverage");
    for k in &traj.uk_list {
        out.push_str(&format!(",u_{k}"));
    }
    out.push_str(",conv_res,wall_gap,hess_min_eig,weyl_res\n");
    for rec in &traj.records {
        out.push_str(&fmt_f64(rec.t));
        for x in &rec.x_t {
            out.push(',');
            out.push_str(&fmt_f64(*x));
        }
        for v in [rec.m_t, rec.c_t, rec.osc_h, rec.hess_sup, rec.mass, rec.coverage] {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        for u in &rec.uk {
            out.push(',');
            out.push_str(&fmt_f64(*u));
        }
        for v in [rec.conv_res, rec.wall_gap, rec.hess_min_eig, rec.weyl_res] {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
    out
}
