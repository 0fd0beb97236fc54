//! The fixed label colours shared by the review UI and text reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::MoveLabel;

/// The palette as shipped, a JSON object keyed by label code.
pub const PALETTE_JSON: &str = include_str!("../data/palette.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStyle {
    pub name: String,
    /// `#RRGGBB`
    pub color: String,
}

/// Style per label, in canonical label order.
pub fn palette() -> Vec<(MoveLabel, LabelStyle)> {
    let map: BTreeMap<MoveLabel, LabelStyle> =
        serde_json::from_str(PALETTE_JSON).expect("bundled palette is valid");
    MoveLabel::ALL
        .into_iter()
        .map(|l| (l, map.get(&l).cloned().expect("palette covers every label")))
        .collect()
}
