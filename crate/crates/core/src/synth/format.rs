//! en-US number and list formatting.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// `2454` -> `2,454`; negative values keep their sign.
pub fn thousands(n: i64) -> String {
    let digits = n.unsigned_abs().to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    if n < 0 {
        out.insert(0, '-');
    }
    out
}

/// Whole dollars: `7725916` -> `$7,725,916`.
pub fn money(n: i64) -> String {
    if n < 0 {
        format!("-${}", thousands(-n))
    } else {
        format!("${}", thousands(n))
    }
}

/// `1` -> `1st`, `12` -> `12th`, `23` -> `23rd`.
pub fn ordinal(n: u32) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

/// Two decimals, as metric values are published (`0.1` -> `0.10`).
pub fn decimal2(v: f64) -> String {
    format!("{v:.2}")
}

/// A number as a count when integral, otherwise with two decimals.
pub fn number(v: f64) -> String {
    if libm::trunc(v) == v && libm::fabs(v) < 9.0e15 {
        thousands(v as i64)
    } else {
        decimal2(v)
    }
}

/// `a`, `a and b`, `a, b, and c`.
pub fn oxford(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => {
            let head: Vec<&str> = init.iter().map(String::as_str).collect();
            format!("{}, and {last}", head.join(", "))
        }
    }
}
