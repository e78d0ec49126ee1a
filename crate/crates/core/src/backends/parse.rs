//! Reply grammar: a JSON object embedded anywhere in free text, carrying
//! `"bbox": [x1, y1, x2, y2]` for generation and refinement or
//! `"choice": k` for selection.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::geometry::{clamp_box, BBox, GeometryError, ImageDims};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no JSON object with a valid `{0}` field in reply")]
    NoPayload(&'static str),
    #[error("box is degenerate: {0}")]
    DegenerateBox(GeometryError),
    #[error("choice {choice} is not one of the {marks} marks")]
    ChoiceOutOfRange { choice: i64, marks: usize },
}

/// Returns the first JSON object in `text` for which `accept` yields a value.
/// Objects nested inside other objects are visited too.
fn first_object<T>(text: &str, mut accept: impl FnMut(&Map<String, Value>) -> Option<T>) -> Option<T> {
    text.char_indices().filter(|&(_, c)| c == '{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => accept(&map),
            _ => None,
        }
    })
}

fn four_numbers(v: &Value) -> Option<[f64; 4]> {
    let arr = v.as_array()?;
    if arr.len() != 4 {
        return None;
    }
    let mut out = [0.0; 4];
    for (slot, n) in out.iter_mut().zip(arr) {
        *slot = n.as_f64().filter(|f| f.is_finite())?;
    }
    Some(out)
}

/// Extracts a box from a generation or refinement reply, orders its corners
/// and clamps it to `dims`.
pub fn parse_generation_reply(raw: &str, dims: ImageDims) -> Result<BBox, ParseError> {
    let [xa, ya, xb, yb] =
        first_object(raw, |m| m.get("bbox").and_then(four_numbers)).ok_or(ParseError::NoPayload("bbox"))?;
    let ordered = BBox::from_corners(xa, ya, xb, yb).map_err(|_| {
        ParseError::DegenerateBox(GeometryError::DegenerateBox {
            width: (xb - xa).abs(),
            height: (yb - ya).abs(),
        })
    })?;
    clamp_box(&ordered, dims).map_err(ParseError::DegenerateBox)
}

/// Extracts a 1-based mark index and checks it against `marks`.
pub fn parse_selection_reply(raw: &str, marks: usize) -> Result<usize, ParseError> {
    let choice = first_object(raw, |m| {
        let v = m.get("choice")?;
        v.as_i64()
            .or_else(|| v.as_f64().filter(|f| f.fract() == 0.0 && f.abs() < 1e15).map(|f| f as i64))
            .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
    })
    .ok_or(ParseError::NoPayload("choice"))?;
    if choice < 1 || choice as u64 > marks as u64 {
        return Err(ParseError::ChoiceOutOfRange { choice, marks });
    }
    Ok(choice as usize)
}
