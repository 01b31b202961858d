//! The `pandora-time/1` JSON instance format.
//!
//! ```json
//! {"format": "pandora-time/1", "horizon": 3, "variant": "general",
//!  "boxes": [{"cost": {"const": "1"}, "p": 0,
//!             "rewards": {"const": [["10", "1/2"], ["0", "1/2"]]},
//!             "discount": {"kind": "identity"}}]}
//! ```
//!
//! Tables are either `{"const": x}` or keyed by round `"1".."H"`. A round
//! missing from the cost table (or `null`) cannot be inspected. Rationals are
//! written as `"num/den"` strings; numbers and decimal strings are accepted
//! on input and parsed exactly.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::model::{BoxSpec, DiscountRule, DiscreteDistribution, Instance, Variant};
use crate::rational::{format_rational, serde_rational::from_json_value};

pub const FORMAT_TAG: &str = "pandora-time/1";

fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}

pub fn instance_from_json(text: &str) -> Result<Instance> {
    instance_from_value(&serde_json::from_str(text)?)
}

pub fn instance_from_value(root: &Value) -> Result<Instance> {
    let obj = root.as_object().ok_or_else(|| structural("instance must be a JSON object"))?;
    match obj.get("format").and_then(Value::as_str) {
        Some(FORMAT_TAG) => {}
        Some(other) => return Err(structural(format!("unsupported format '{other}', expected '{FORMAT_TAG}'"))),
        None => return Err(structural(format!("missing \"format\": \"{FORMAT_TAG}\""))),
    }
    let horizon = obj
        .get("horizon")
        .and_then(Value::as_u64)
        .ok_or_else(|| structural("\"horizon\" must be a nonnegative integer"))? as usize;
    let variant = match obj.get("variant") {
        None | Some(Value::Null) => Variant::General,
        Some(v) => serde_json::from_value(v.clone()).map_err(|_| structural(format!("unknown variant {v}")))?,
    };
    let boxes = obj
        .get("boxes")
        .and_then(Value::as_array)
        .ok_or_else(|| structural("\"boxes\" must be an array"))?
        .iter()
        .enumerate()
        .map(|(i, b)| parse_box(b, horizon).map_err(|e| structural(format!("boxes[{i}]: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Instance::new(boxes, horizon, variant))
}

fn parse_box(raw: &Value, horizon: usize) -> Result<BoxSpec> {
    let obj = raw.as_object().ok_or_else(|| structural("box must be an object"))?;
    let cost = match obj.get("cost") {
        None | Some(Value::Null) => vec![None; horizon],
        Some(v) => table(v, horizon, "cost", |x| match x {
            Value::Null => Ok(None),
            other => from_json_value(other).map(Some),
        }, Some(None))?,
    };
    let processing_time = match obj.get("p") {
        None => 0,
        Some(v) => v.as_u64().ok_or_else(|| structural("\"p\" must be a nonnegative integer"))? as usize,
    };
    let rewards = table(
        obj.get("rewards").ok_or_else(|| structural("missing \"rewards\""))?,
        horizon,
        "rewards",
        parse_distribution,
        None,
    )?;
    let discount = match obj.get("discount") {
        None | Some(Value::Null) => DiscountRule::Identity,
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| structural(format!("discount: {e}")))?,
    };
    Ok(BoxSpec { cost, processing_time, rewards, discount })
}

/// Expands `{"const": x}` or a round-keyed map into `H` entries. Rounds
/// missing from the map take `missing`, or fail when that is `None`.
fn table<T: Clone>(
    raw: &Value,
    horizon: usize,
    name: &str,
    parse: impl Fn(&Value) -> Result<T>,
    missing: Option<T>,
) -> Result<Vec<T>> {
    let obj = raw.as_object().ok_or_else(|| structural(format!("\"{name}\" must be an object")))?;
    if let Some(c) = obj.get("const") {
        if obj.len() != 1 {
            return Err(structural(format!("\"{name}\" mixes \"const\" with round keys")));
        }
        return Ok(vec![parse(c)?; horizon]);
    }
    let mut out: Vec<Option<T>> = vec![None; horizon];
    for (key, v) in obj {
        let t: usize = key.parse().map_err(|_| structural(format!("\"{name}\" has non-round key '{key}'")))?;
        if t == 0 || t > horizon {
            return Err(structural(format!("\"{name}\" round {t} outside 1..={horizon}")));
        }
        out[t - 1] = Some(parse(v)?);
    }
    out.into_iter()
        .enumerate()
        .map(|(k, v)| {
            v.or_else(|| missing.clone())
                .ok_or_else(|| structural(format!("\"{name}\" has no entry for round {}", k + 1)))
        })
        .collect()
}

fn parse_distribution(raw: &Value) -> Result<DiscreteDistribution> {
    let atoms = raw
        .as_array()
        .ok_or_else(|| structural("a reward law must be a list of [value, probability] pairs"))?
        .iter()
        .map(|pair| match pair.as_array().map(Vec::as_slice) {
            Some([v, p]) => Ok((from_json_value(v)?, from_json_value(p)?)),
            _ => Err(structural("a reward atom must be a [value, probability] pair")),
        })
        .collect::<Result<Vec<_>>>()?;
    DiscreteDistribution::new(atoms)
}

pub fn instance_to_value(instance: &Instance) -> Value {
    let boxes: Vec<Value> = instance
        .boxes
        .iter()
        .map(|b| {
            let mut obj = Map::new();
            obj.insert("cost".into(), write_table(&b.cost, |c| c.as_ref().map_or(Value::Null, |c| Value::String(format_rational(c)))));
            obj.insert("p".into(), json!(b.processing_time));
            obj.insert("rewards".into(), write_table(&b.rewards, distribution_value));
            obj.insert("discount".into(), serde_json::to_value(&b.discount).unwrap_or(Value::Null));
            Value::Object(obj)
        })
        .collect();
    json!({
        "format": FORMAT_TAG,
        "horizon": instance.horizon,
        "variant": instance.variant.to_string(),
        "boxes": boxes,
    })
}

fn write_table<T: PartialEq>(entries: &[T], write: impl Fn(&T) -> Value) -> Value {
    let mut obj = Map::new();
    if entries.windows(2).all(|w| w[0] == w[1]) && !entries.is_empty() {
        obj.insert("const".into(), write(&entries[0]));
    } else {
        for (k, e) in entries.iter().enumerate() {
            obj.insert((k + 1).to_string(), write(e));
        }
    }
    Value::Object(obj)
}

fn distribution_value(d: &DiscreteDistribution) -> Value {
    Value::Array(
        d.atoms()
            .iter()
            .map(|(v, p)| json!([format_rational(v), format_rational(p)]))
            .collect(),
    )
}

pub fn instance_to_json(instance: &Instance) -> String {
    let mut text = serde_json::to_string_pretty(&instance_to_value(instance)).expect("instance values always serialize");
    text.push('\n');
    text
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    let text = std::fs::read_to_string(path)?;
    instance_from_json(&text)
}

pub fn save_instance(path: &Path, instance: &Instance) -> Result<()> {
    std::fs::write(path, instance_to_json(instance))?;
    Ok(())
}
