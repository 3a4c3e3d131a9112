//! Synthetic record-to-text corpus with latent templates.
//!
//! Each instance draws an attribute subset and an area. The subset picks
//! which attributes appear; the area's group picks a formal or casual
//! phrasing. Subset × register gives eight templates, and instances that
//! share a template also share most of their source tokens, so retrieved
//! exemplars carry the phrasing a model should produce.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{linearize_records, RawInstance, RecordTable};
use crate::error::{Error, Result};
use crate::numerics::RandomStream;

pub const TEMPLATES: usize = 8;

const NAMES: &[&str] = &[
    "the golden curry",
    "blue spice",
    "the eagle",
    "green man",
    "aromi",
    "the vaults",
    "zizzi",
    "the phoenix",
    "loch fyne",
    "the mill",
    "cotto",
    "fitzbillies",
    "the wrestlers",
    "strada",
    "the punter",
    "browns",
    "giraffe",
    "the olive grove",
    "wildwood",
    "alimentum",
    "the cricketers",
    "midsummer house",
    "bibimbap house",
    "the plough",
];
const FOODS: &[&str] = &["italian", "french", "chinese", "indian", "japanese", "english", "fast food", "thai"];
const PRICES: &[&str] = &["cheap", "moderate", "high"];
const RATINGS: &[&str] = &["low", "average", "good", "excellent"];
const NEAR: &[&str] = &["the bridge", "the museum", "city hall", "the station", "the park", "the cinema"];
/// The first three areas take formal phrasing, the rest casual.
const AREAS: &[&str] = &["riverside", "city centre", "harbour", "north side", "old town", "market square"];

const SUBSETS: [&[&str]; 4] = [
    &["name", "food", "area"],
    &["name", "food", "price", "area"],
    &["name", "rating", "near", "area"],
    &["name", "food", "rating", "price", "area"],
];

const PHRASINGS: [&str; TEMPLATES] = [
    "{name} serves {food} food in the {area} area .",
    "{name} is a {price} {food} restaurant located in the {area} area .",
    "located near {near} in the {area} area , {name} has a {rating} customer rating .",
    "{name} offers {food} food at {price} prices in the {area} area and is rated {rating} .",
    "try {name} for some {food} food over in {area} !",
    "{name} does {price} {food} grub over in {area} !",
    "{name} is by {near} in {area} and folks rate it {rating} !",
    "for {food} at {price} prices , {name} in {area} is rated {rating} by folks !",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train: 2000,
            dev: 200,
            test: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthInstance {
    pub records: RecordTable,
    pub target: String,
    pub template: usize,
}

impl SynthInstance {
    /// `{"records": [[attr, value], …], "target": …}` on one line.
    pub fn to_json_line(&self) -> String {
        json!({ "records": self.records.0, "target": self.target }).to_string()
    }

    pub fn to_raw(&self, id: u32) -> Result<RawInstance> {
        Ok(RawInstance {
            id,
            source: linearize_records(&self.records)?,
            target: self.target.clone(),
        })
    }
}

fn pick<'a>(rng: &mut RandomStream, xs: &[&'a str]) -> &'a str {
    xs[rng.below(xs.len())]
}

/// One instance drawn from `rng`.
pub fn sample_instance(rng: &mut RandomStream) -> SynthInstance {
    let subset = rng.below(SUBSETS.len());
    let area_idx = rng.below(AREAS.len());
    let template = subset + if area_idx < AREAS.len() / 2 { 0 } else { SUBSETS.len() };
    let values = [
        ("name", pick(rng, NAMES)),
        ("food", pick(rng, FOODS)),
        ("price", pick(rng, PRICES)),
        ("rating", pick(rng, RATINGS)),
        ("near", pick(rng, NEAR)),
        ("area", AREAS[area_idx]),
    ];
    let mut target = PHRASINGS[template].to_string();
    let mut records = Vec::new();
    for attr in SUBSETS[subset] {
        let v = values.iter().find(|(a, _)| a == attr).expect("known attribute").1;
        target = target.replace(&format!("{{{attr}}}"), v);
        records.push((attr.to_string(), v.to_string()));
    }
    SynthInstance {
        records: RecordTable(records),
        target,
        template,
    }
}

/// Train, dev and test splits, each drawn from its own keyed stream.
pub fn synthesize(config: &SynthConfig) -> Result<[Vec<SynthInstance>; 3]> {
    if config.train < 2 {
        return Err(Error::invalid("synth.train must be at least 2"));
    }
    let split = |k: u64, n: usize| {
        let mut rng = RandomStream::derive(config.seed, &[k]);
        (0..n).map(|_| sample_instance(&mut rng)).collect::<Vec<_>>()
    };
    Ok([split(0, config.train), split(1, config.dev), split(2, config.test)])
}
