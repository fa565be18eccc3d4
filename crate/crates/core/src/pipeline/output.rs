//! Byte-stable JSON and CSV output.
//!
//! Floats are written with 17 significant digits in exponent form, so every
//! value round-trips and two runs over the same inputs produce identical
//! files. Non-finite floats become `null`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

/// `PrettyFormatter` with fixed-precision floats.
struct StableFormatter<'a>(PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl Formatter for StableFormatter<'_> {
    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }

    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
}

/// 17 significant digits, e.g. `1.0000000000000000e0`.
pub fn format_f64(value: f64) -> String {
    format!("{value:.16e}")
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> io::Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, StableFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser).map_err(io::Error::other)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, to_json_bytes(value)?)
}

/// Writes a CSV with a header row. Cells are pre-formatted strings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{}", header.join(","))?;
    for row in rows {
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()
}

pub fn csv_f64(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format_f64(x),
        _ => String::new(),
    }
}

/// File-name-safe form of a prompt id.
pub fn safe_name(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("_{s}")
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Sample {
        a: f64,
        b: Vec<f64>,
        c: usize,
        d: Option<f64>,
    }

    #[test]
    fn floats_use_seventeen_digits_and_round_trip() {
        let s = Sample {
            a: 0.1,
            b: vec![1.0, -2.5e-7, f64::NAN],
            c: 3,
            d: None,
        };
        let text = String::from_utf8(to_json_bytes(&s).unwrap()).unwrap();
        assert!(text.contains("\"a\": 1.0000000000000001e-1"));
        assert!(text.contains("-2.4999999999999999e-7") || text.contains("-2.5000000000000000e-7"));
        assert!(text.contains("null"));
        assert!(text.contains("\"c\": 3"));
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["a"].as_f64().unwrap(), 0.1);
        assert_eq!(v["b"][1].as_f64().unwrap(), -2.5e-7);
    }

    #[test]
    fn safe_names() {
        assert_eq!(safe_name("pile/123 a"), "pile_123_a");
        assert_eq!(safe_name(""), "_");
        assert_eq!(safe_name(".."), "_..");
    }
}
