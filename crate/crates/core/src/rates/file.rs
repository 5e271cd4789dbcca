//! Rate specs from text: built-in names and explicit truth-table files.
//!
//! A rate file is JSON5 (unquoted keys allowed). Each local function is written
//! `{ support: [[dx, dy], ...], table: [v0, v1, ...] }`, where the table index is
//! the little-endian bit pattern of the occupancies in support order.
//!
//! ```text
//! {
//!   dimension: 1,
//!   exchange: [
//!     { rate: { support: [], table: [1.0] },
//!       witness: { support: [[0]], table: [0.0, 1.0] } },
//!   ],
//!   flip: {
//!     c_plus: { support: [], table: [1.0] },
//!     c_minus: { support: [], table: [1.0] },
//!   },
//! }
//! ```
//!
//! `exchange` and `flip` may also be built-in names such as
//! `"speedchange(0.3)"` or `"cubicflip(0.25,0.75,0.5)"`.

use serde::{Deserialize, Serialize};

use super::{DirectionRates, ExchangeRateSpec, FlipRateSpec, LocalFunction, RateError};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableDef {
    support: Vec<Vec<i64>>,
    table: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DirectionDef {
    rate: TableDef,
    witness: TableDef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FlipDef {
    c_plus: TableDef,
    c_minus: TableDef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ExchangeDef {
    Named(String),
    Explicit(Vec<DirectionDef>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum FlipEntry {
    Named(String),
    Explicit(FlipDef),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RateFileDef {
    dimension: usize,
    exchange: ExchangeDef,
    #[serde(default)]
    flip: Option<FlipEntry>,
}

/// Parsed contents of a rate file.
#[derive(Debug, Clone)]
pub struct RateFile {
    pub exchange: ExchangeRateSpec,
    pub flip: Option<FlipRateSpec>,
}

fn table(dim: usize, def: TableDef) -> Result<LocalFunction, RateError> {
    LocalFunction::new(dim, def.support, def.table)
}

impl RateFile {
    pub fn parse(text: &str) -> Result<Self, RateError> {
        let def: RateFileDef = json5::from_str(text).map_err(|e| RateError::File(e.to_string()))?;
        let dim = def.dimension;
        let exchange = match def.exchange {
            ExchangeDef::Named(name) => parse_named_exchange(&name, dim)?,
            ExchangeDef::Explicit(dirs) => {
                let directions = dirs
                    .into_iter()
                    .map(|d| {
                        Ok(DirectionRates {
                            rate: table(dim, d.rate)?,
                            witness: table(dim, d.witness)?,
                        })
                    })
                    .collect::<Result<Vec<_>, RateError>>()?;
                ExchangeRateSpec::new(dim, directions)?
            }
        };
        let flip = match def.flip {
            None => None,
            Some(FlipEntry::Named(name)) => Some(parse_named_flip(&name, dim)?),
            Some(FlipEntry::Explicit(f)) => Some(FlipRateSpec::new(table(dim, f.c_plus)?, table(dim, f.c_minus)?)?),
        };
        Ok(RateFile { exchange, flip })
    }

    /// Serializes back to the explicit table form.
    pub fn to_text(&self) -> String {
        let def = |f: &LocalFunction| TableDef {
            support: f.support().to_vec(),
            table: f.table().to_vec(),
        };
        let file = RateFileDef {
            dimension: self.exchange.dim(),
            exchange: ExchangeDef::Explicit(
                self.exchange
                    .directions()
                    .iter()
                    .map(|d| DirectionDef {
                        rate: def(&d.rate),
                        witness: def(&d.witness),
                    })
                    .collect(),
            ),
            flip: self.flip.as_ref().map(|f| {
                FlipEntry::Explicit(FlipDef {
                    c_plus: def(f.c_plus()),
                    c_minus: def(f.c_minus()),
                })
            }),
        };
        serde_json::to_string_pretty(&file).expect("serializable")
    }
}

fn split_call(text: &str) -> Result<(String, Vec<f64>), RateError> {
    let text = text.trim();
    let Some(open) = text.find('(') else {
        return Ok((text.to_string(), Vec::new()));
    };
    let name = text[..open].trim().to_string();
    let inner = text[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| RateError::UnknownName(text.to_string()))?;
    let args = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| RateError::InvalidParameter(format!("not a number: '{s}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name, args))
}

/// `simple` or `speedchange(a)` / `speedchange(a1,...,ad)`.
pub fn parse_named_exchange(text: &str, dim: usize) -> Result<ExchangeRateSpec, RateError> {
    let (name, args) = split_call(text)?;
    match (name.as_str(), args.len()) {
        ("simple", 0) => Ok(ExchangeRateSpec::simple(dim)),
        ("speedchange", n) if n > 0 => ExchangeRateSpec::speedchange(dim, &args),
        _ => Err(RateError::UnknownName(text.to_string())),
    }
}

/// `cubicflip(alpha1,alpha2,alphastar)` or `constant(plus,minus)`.
pub fn parse_named_flip(text: &str, dim: usize) -> Result<FlipRateSpec, RateError> {
    let (name, args) = split_call(text)?;
    match (name.as_str(), args.as_slice()) {
        ("cubicflip", &[a1, a2, s]) => FlipRateSpec::cubicflip(dim, a1, a2, s),
        ("constant", &[p, m]) => FlipRateSpec::constant(dim, p, m),
        _ => Err(RateError::UnknownName(text.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_named_specs() {
        assert_eq!(parse_named_exchange("simple", 2).unwrap(), ExchangeRateSpec::simple(2));
        let s = parse_named_exchange("speedchange(0.5, 0.2)", 2).unwrap();
        assert_eq!(s, ExchangeRateSpec::speedchange(2, &[0.5, 0.2]).unwrap());
        assert!(parse_named_exchange("nonsense", 1).is_err());
        let f = parse_named_flip("cubicflip(0.25,0.75,0.5)", 1).unwrap();
        assert_eq!(f, FlipRateSpec::cubicflip(1, 0.25, 0.75, 0.5).unwrap());
    }

    #[test]
    fn parses_explicit_tables() {
        let text = r#"{
            dimension: 1,
            exchange: [ { rate: { support: [], table: [1.0] },
                          witness: { support: [[0]], table: [0.0, 1.0] } } ],
            flip: "cubicflip(0.25,0.75,0.5)",
        }"#;
        let f = RateFile::parse(text).unwrap();
        assert_eq!(f.exchange, ExchangeRateSpec::simple(1));
        assert!(f.flip.is_some());
    }

    #[test]
    fn explicit_round_trip() {
        let original = RateFile {
            exchange: ExchangeRateSpec::speedchange(2, &[0.3]).unwrap(),
            flip: Some(FlipRateSpec::cubicflip(2, 0.25, 0.75, 0.5).unwrap()),
        };
        let back = RateFile::parse(&original.to_text()).unwrap();
        assert_eq!(back.exchange, original.exchange);
        assert_eq!(back.flip, original.flip);
    }

    #[test]
    fn wrong_table_length_is_rejected() {
        let text = r#"{ dimension: 1, exchange: [ { rate: { support: [[2]], table: [1.0] },
                         witness: { support: [[0]], table: [0.0, 1.0] } } ] }"#;
        assert!(matches!(RateFile::parse(text), Err(RateError::TableLength { .. })));
    }
}
