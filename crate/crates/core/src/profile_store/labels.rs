//! Categorical conditioning attributes and their canonical one-hot layout.
//!
//! The encoded vector is laid out as
//! `[has_ev, has_heat_pump, smart_tariff, property_type x5, energy_rating x7]`,
//! for a total width of [`LABEL_DIM`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the one-hot label encoding.
pub const LABEL_DIM: usize = 3 + PropertyType::COUNT + EnergyRating::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyType {
    Detached,
    SemiDetached,
    Terraced,
    Flat,
    Bungalow,
}

impl PropertyType {
    pub const COUNT: usize = 5;
    pub const ALL: [PropertyType; 5] = [
        PropertyType::Detached,
        PropertyType::SemiDetached,
        PropertyType::Terraced,
        PropertyType::Flat,
        PropertyType::Bungalow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn token(self) -> &'static str {
        match self {
            PropertyType::Detached => "detached",
            PropertyType::SemiDetached => "semi_detached",
            PropertyType::Terraced => "terraced",
            PropertyType::Flat => "flat",
            PropertyType::Bungalow => "bungalow",
        }
    }
}

impl FromStr for PropertyType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PropertyType::ALL
            .into_iter()
            .find(|p| p.token() == s)
            .ok_or_else(|| Error::UnknownEnumValue {
                field: "property_type",
                value: s.to_string(),
            })
    }
}

impl fmt::Display for PropertyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyRating {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

impl EnergyRating {
    pub const COUNT: usize = 7;
    pub const ALL: [EnergyRating; 7] = [
        EnergyRating::A,
        EnergyRating::B,
        EnergyRating::C,
        EnergyRating::D,
        EnergyRating::E,
        EnergyRating::F,
        EnergyRating::G,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn token(self) -> &'static str {
        ["a", "b", "c", "d", "e", "f", "g"][self.index()]
    }

    /// Representative rating of the coarse band this rating falls into
    /// (A/B -> A, C/D -> C, E/F/G -> E).
    pub fn band(self) -> EnergyRating {
        match self {
            EnergyRating::A | EnergyRating::B => EnergyRating::A,
            EnergyRating::C | EnergyRating::D => EnergyRating::C,
            EnergyRating::E | EnergyRating::F | EnergyRating::G => EnergyRating::E,
        }
    }
}

impl FromStr for EnergyRating {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnergyRating::ALL
            .into_iter()
            .find(|r| r.token() == s)
            .ok_or_else(|| Error::UnknownEnumValue {
                field: "energy_rating",
                value: s.to_string(),
            })
    }
}

impl fmt::Display for EnergyRating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Full label combination for one household.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelVector {
    pub has_ev: bool,
    pub has_heat_pump: bool,
    pub smart_tariff: bool,
    pub property_type: PropertyType,
    pub energy_rating: EnergyRating,
}

impl LabelVector {
    pub fn encode_onehot(&self) -> [f64; LABEL_DIM] {
        let mut out = [0.0; LABEL_DIM];
        out[0] = f64::from(u8::from(self.has_ev));
        out[1] = f64::from(u8::from(self.has_heat_pump));
        out[2] = f64::from(u8::from(self.smart_tariff));
        out[3 + self.property_type.index()] = 1.0;
        out[3 + PropertyType::COUNT + self.energy_rating.index()] = 1.0;
        out
    }

    /// Discretizes a (possibly continuous) label tail: booleans threshold at
    /// 0.5 inclusive, categorical groups take the argmax with ties going to
    /// the lower index.
    pub fn decode(tail: &[f64]) -> Result<Self> {
        if tail.len() != LABEL_DIM {
            return Err(Error::DimensionMismatch(format!(
                "label tail has {} entries, expected {LABEL_DIM}",
                tail.len()
            )));
        }
        let prop = argmax_low_tie(&tail[3..3 + PropertyType::COUNT]);
        let rating = argmax_low_tie(&tail[3 + PropertyType::COUNT..]);
        Ok(LabelVector {
            has_ev: tail[0] >= 0.5,
            has_heat_pump: tail[1] >= 0.5,
            smart_tariff: tail[2] >= 0.5,
            property_type: PropertyType::ALL[prop],
            energy_rating: EnergyRating::ALL[rating],
        })
    }

    /// Enumerates all 2*2*2*5*7 = 280 combinations in canonical order.
    pub fn all() -> impl Iterator<Item = LabelVector> {
        let bools = [false, true];
        bools.into_iter().flat_map(move |ev| {
            bools.into_iter().flat_map(move |hp| {
                bools.into_iter().flat_map(move |st| {
                    PropertyType::ALL.into_iter().flat_map(move |pt| {
                        EnergyRating::ALL.into_iter().map(move |er| LabelVector {
                            has_ev: ev,
                            has_heat_pump: hp,
                            smart_tariff: st,
                            property_type: pt,
                            energy_rating: er,
                        })
                    })
                })
            })
        })
    }
}

fn argmax_low_tie(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Partial label constraint; `None` fields match anything.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_ev: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_heat_pump: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smart_tariff: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property_type: Option<PropertyType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_rating: Option<EnergyRating>,
}

impl Condition {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn matches(&self, labels: &LabelVector) -> bool {
        self.has_ev.is_none_or(|v| v == labels.has_ev)
            && self.has_heat_pump.is_none_or(|v| v == labels.has_heat_pump)
            && self.smart_tariff.is_none_or(|v| v == labels.smart_tariff)
            && self.property_type.is_none_or(|v| v == labels.property_type)
            && self.energy_rating.is_none_or(|v| v == labels.energy_rating)
    }
}

/// Which trailing coordinates of a latent-with-labels row encode which group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelLayout {
    /// Number of single-coordinate boolean attributes at the start of the tail.
    pub booleans: u32,
    /// Widths of the categorical groups that follow, in order.
    pub groups: [u32; 2],
}

impl LabelLayout {
    pub const CANONICAL: LabelLayout = LabelLayout {
        booleans: 3,
        groups: [PropertyType::COUNT as u32, EnergyRating::COUNT as u32],
    };

    pub fn width(&self) -> usize {
        self.booleans as usize + self.groups.iter().map(|&g| g as usize).sum::<usize>()
    }

    pub fn is_canonical(&self) -> bool {
        *self == Self::CANONICAL
    }
}
