//! Deterministic JSON emission: pretty-printed, keys in fixed order
//! (struct order or BTreeMap order upstream), every float written with 17
//! significant digits so artifacts are byte-stable and round-trip exactly.

use std::io::Write;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter, Serializer};

use crate::error::Result;

/// Pretty formatter with fixed-width scientific floats. Non-finite values
/// become JSON null, matching serde_json's lossy default. Negative zero is
/// canonicalized to plain zero so an algebraically-zero result cannot leak
/// its sign history into the artifact bytes.
struct SciFloats<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for SciFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        let value = if value == 0.0 { 0.0 } else { value };
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Serialize to the artifact JSON form (pretty, 17-digit floats, trailing
/// newline).
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let fmt = SciFloats { inner: PrettyFormatter::new() };
    let mut ser = Serializer::with_formatter(&mut buf, fmt);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Write an artifact JSON file atomically enough for test use (single
/// write call).
pub fn write_json_file<T: Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let text = to_json_string(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Fixed-width scientific form used for CSV cells, identical to the JSON
/// float form (including the negative-zero canonicalization).
pub fn format_float(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}
