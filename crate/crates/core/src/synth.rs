//! Seeded synthetic benchmark tables: ten domains, 15 columns each, with
//! numbers, small integers, categoricals, a timestamp, an id column and
//! free-text notes. A per-row latent variable drives several numeric
//! columns and one categorical column so labels are learnable.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::table::{infer_schema, Table};
use crate::util::rng_for;

#[derive(Debug, Clone, Copy)]
enum Gen {
    Id(&'static str),
    Time(i32),
    Notes,
    Cat(&'static [&'static str]),
    /// Levels ordered along the latent variable.
    Ordinal(&'static [&'static str]),
    Num { lo: f64, hi: f64, decimals: u32, latent: f64 },
    Int { lo: i64, hi: i64, latent: f64 },
}

use Gen::*;

struct Spec {
    name: &'static str,
    columns: [(&'static str, Gen); 15],
}

const YES_NO: &[&str] = &["yes", "no"];

const SPECS: [Spec; 10] = [
    Spec {
        name: "clinic",
        columns: [
            ("patient", Id("P")),
            ("admitted", Time(2019)),
            ("remarks", Notes),
            ("ward", Cat(&["north", "south", "east", "west"])),
            ("insurance", Cat(&["public", "private", "uninsured"])),
            ("triage", Ordinal(&["low", "medium", "high", "critical"])),
            ("age", Int { lo: 18, hi: 90, latent: 0.6 }),
            ("weight", Num { lo: 40.0, hi: 130.0, decimals: 1, latent: 0.3 }),
            ("glucose", Num { lo: 60.0, hi: 250.0, decimals: 0, latent: 0.7 }),
            ("cholesterol", Num { lo: 120.0, hi: 320.0, decimals: 0, latent: 0.5 }),
            ("heartrate", Num { lo: 50.0, hi: 140.0, decimals: 0, latent: 0.4 }),
            ("temperature", Num { lo: 35.5, hi: 40.5, decimals: 1, latent: 0.5 }),
            ("visits", Int { lo: 0, hi: 10, latent: 0.3 }),
            ("allergies", Int { lo: 0, hi: 5, latent: 0.0 }),
            ("smoker", Cat(YES_NO)),
        ],
    },
    Spec {
        name: "retail",
        columns: [
            ("order", Id("O")),
            ("placed", Time(2021)),
            ("comment", Notes),
            ("channel", Cat(&["online", "store", "phone", "partner"])),
            ("region", Cat(&["americas", "europe", "asia", "africa", "oceania"])),
            ("tier", Ordinal(&["basic", "plus", "premium"])),
            ("price", Num { lo: 2.0, hi: 900.0, decimals: 2, latent: 0.7 }),
            ("quantity", Int { lo: 1, hi: 20, latent: 0.2 }),
            ("discount", Num { lo: 0.0, hi: 0.5, decimals: 2, latent: -0.3 }),
            ("rating", Num { lo: 1.0, hi: 5.0, decimals: 1, latent: 0.4 }),
            ("shipping", Num { lo: 0.0, hi: 60.0, decimals: 2, latent: 0.2 }),
            ("revenue", Num { lo: 10.0, hi: 15000.0, decimals: 2, latent: 0.8 }),
            ("returns", Int { lo: 0, hi: 4, latent: -0.2 }),
            ("items", Int { lo: 1, hi: 12, latent: 0.3 }),
            ("payment", Cat(&["card", "cash", "transfer", "voucher"])),
        ],
    },
    Spec {
        name: "housing",
        columns: [
            ("listing", Id("L")),
            ("listed", Time(2018)),
            ("description", Notes),
            ("district", Cat(&["harbor", "uptown", "midtown", "suburb", "riverside", "hills"])),
            ("style", Cat(&["ranch", "colonial", "modern", "cottage", "loft"])),
            ("condition", Ordinal(&["poor", "fair", "good", "excellent"])),
            ("sqft", Num { lo: 400.0, hi: 5000.0, decimals: 0, latent: 0.7 }),
            ("bedrooms", Int { lo: 1, hi: 6, latent: 0.6 }),
            ("bathrooms", Int { lo: 1, hi: 4, latent: 0.5 }),
            ("lotsize", Num { lo: 0.05, hi: 2.5, decimals: 2, latent: 0.3 }),
            ("yearbuilt", Int { lo: 1900, hi: 2022, latent: 0.4 }),
            ("taxes", Num { lo: 500.0, hi: 25000.0, decimals: 2, latent: 0.8 }),
            ("hoa", Num { lo: 0.0, hi: 800.0, decimals: 0, latent: 0.1 }),
            ("garage", Int { lo: 0, hi: 3, latent: 0.3 }),
            ("heating", Cat(&["gas", "electric", "oil", "heatpump"])),
        ],
    },
    Spec {
        name: "weather",
        columns: [
            ("station", Id("W")),
            ("observed", Time(2020)),
            ("summary", Notes),
            ("climate", Cat(&["arid", "temperate", "tropical", "polar", "continental"])),
            ("terrain", Cat(&["coastal", "mountain", "plain", "valley"])),
            ("alert", Ordinal(&["green", "yellow", "orange", "red"])),
            ("rainfall", Num { lo: 0.0, hi: 300.0, decimals: 1, latent: 0.7 }),
            ("humidity", Num { lo: 10.0, hi: 100.0, decimals: 0, latent: 0.5 }),
            ("windspeed", Num { lo: 0.0, hi: 120.0, decimals: 1, latent: 0.8 }),
            ("pressure", Num { lo: 950.0, hi: 1050.0, decimals: 1, latent: -0.6 }),
            ("elevation", Num { lo: -50.0, hi: 3500.0, decimals: 0, latent: 0.0 }),
            ("visibility", Num { lo: 0.1, hi: 50.0, decimals: 1, latent: -0.5 }),
            ("gusts", Num { lo: 0.0, hi: 180.0, decimals: 1, latent: 0.7 }),
            ("cloudcover", Int { lo: 0, hi: 8, latent: 0.5 }),
            ("season", Cat(&["spring", "summer", "autumn", "winter"])),
        ],
    },
    Spec {
        name: "finance",
        columns: [
            ("account", Id("A")),
            ("opened", Time(2010)),
            ("memo", Notes),
            ("segment", Cat(&["retail", "business", "corporate", "student"])),
            ("currency", Cat(&["usd", "eur", "gbp", "jpy", "chf"])),
            ("riskband", Ordinal(&["minimal", "moderate", "elevated", "severe"])),
            ("balance", Num { lo: -5000.0, hi: 50000.0, decimals: 2, latent: -0.6 }),
            ("income", Num { lo: 8000.0, hi: 250000.0, decimals: 0, latent: -0.5 }),
            ("debt", Num { lo: 0.0, hi: 90000.0, decimals: 2, latent: 0.7 }),
            ("creditscore", Int { lo: 300, hi: 850, latent: -0.8 }),
            ("tenure", Int { lo: 0, hi: 30, latent: -0.2 }),
            ("transactions", Int { lo: 0, hi: 400, latent: 0.1 }),
            ("overdrafts", Int { lo: 0, hi: 9, latent: 0.6 }),
            ("loans", Int { lo: 0, hi: 5, latent: 0.4 }),
            ("branch", Cat(&["central", "airport", "mall", "campus", "online"])),
        ],
    },
    Spec {
        name: "sports",
        columns: [
            ("athlete", Id("S")),
            ("joined", Time(2015)),
            ("bio", Notes),
            ("team", Cat(&["falcons", "wolves", "sharks", "tigers", "ravens", "bears"])),
            ("position", Cat(&["forward", "midfield", "defender", "keeper"])),
            ("league", Ordinal(&["amateur", "regional", "national", "elite"])),
            ("height", Num { lo: 160.0, hi: 205.0, decimals: 0, latent: 0.2 }),
            ("speed", Num { lo: 20.0, hi: 37.0, decimals: 1, latent: 0.6 }),
            ("goals", Int { lo: 0, hi: 40, latent: 0.7 }),
            ("assists", Int { lo: 0, hi: 25, latent: 0.6 }),
            ("minutes", Num { lo: 0.0, hi: 3400.0, decimals: 0, latent: 0.5 }),
            ("salary", Num { lo: 20000.0, hi: 900000.0, decimals: 0, latent: 0.8 }),
            ("injuries", Int { lo: 0, hi: 6, latent: -0.2 }),
            ("titles", Int { lo: 0, hi: 8, latent: 0.5 }),
            ("foot", Cat(&["left", "right", "both"])),
        ],
    },
    Spec {
        name: "energy",
        columns: [
            ("meter", Id("M")),
            ("installed", Time(2012)),
            ("annotation", Notes),
            ("utility", Cat(&["northgrid", "sunpower", "citylight", "valleyco"])),
            ("fuel", Cat(&["coal", "solar", "wind", "hydro", "nuclear"])),
            ("efficiency", Ordinal(&["bronze", "silver", "gold", "platinum"])),
            ("consumption", Num { lo: 50.0, hi: 5000.0, decimals: 1, latent: -0.6 }),
            ("voltage", Num { lo: 110.0, hi: 480.0, decimals: 0, latent: 0.1 }),
            ("amperage", Num { lo: 5.0, hi: 200.0, decimals: 1, latent: 0.2 }),
            ("output", Num { lo: 0.5, hi: 900.0, decimals: 2, latent: 0.7 }),
            ("emissions", Num { lo: 0.0, hi: 1200.0, decimals: 1, latent: -0.8 }),
            ("capacity", Num { lo: 1.0, hi: 2000.0, decimals: 0, latent: 0.5 }),
            ("outages", Int { lo: 0, hi: 12, latent: -0.4 }),
            ("panels", Int { lo: 0, hi: 40, latent: 0.5 }),
            ("phase", Cat(&["single", "split", "three"])),
        ],
    },
    Spec {
        name: "education",
        columns: [
            ("student", Id("E")),
            ("enrolled", Time(2016)),
            ("feedback", Notes),
            ("school", Cat(&["oakwood", "pinecrest", "lakeside", "hillview", "westfield"])),
            ("major", Cat(&["biology", "history", "physics", "economics", "art", "law"])),
            ("standing", Ordinal(&["probation", "satisfactory", "honors", "distinction"])),
            ("gpa", Num { lo: 1.0, hi: 4.0, decimals: 2, latent: 0.9 }),
            ("attendance", Num { lo: 40.0, hi: 100.0, decimals: 1, latent: 0.6 }),
            ("credits", Int { lo: 0, hi: 160, latent: 0.3 }),
            ("absences", Int { lo: 0, hi: 30, latent: -0.6 }),
            ("scholarship", Num { lo: 0.0, hi: 20000.0, decimals: 0, latent: 0.6 }),
            ("studyhours", Num { lo: 0.0, hi: 40.0, decimals: 1, latent: 0.7 }),
            ("projects", Int { lo: 0, hi: 10, latent: 0.4 }),
            ("clubs", Int { lo: 0, hi: 5, latent: 0.2 }),
            ("dorm", Cat(YES_NO)),
        ],
    },
    Spec {
        name: "logistics",
        columns: [
            ("shipment", Id("X")),
            ("dispatched", Time(2022)),
            ("instructions", Notes),
            ("carrier", Cat(&["swiftline", "bluebox", "cargoway", "northstar"])),
            ("mode", Cat(&["air", "sea", "rail", "road"])),
            ("priority", Ordinal(&["economy", "standard", "express", "overnight"])),
            ("distance", Num { lo: 5.0, hi: 12000.0, decimals: 0, latent: 0.3 }),
            ("mass", Num { lo: 0.1, hi: 2500.0, decimals: 2, latent: 0.2 }),
            ("volume", Num { lo: 0.01, hi: 80.0, decimals: 2, latent: 0.1 }),
            ("cost", Num { lo: 8.0, hi: 9000.0, decimals: 2, latent: 0.8 }),
            ("delay", Num { lo: 0.0, hi: 96.0, decimals: 1, latent: -0.7 }),
            ("stops", Int { lo: 1, hi: 9, latent: -0.4 }),
            ("pallets", Int { lo: 0, hi: 24, latent: 0.2 }),
            ("insured", Cat(YES_NO)),
            ("packaging", Cat(&["crate", "envelope", "drum", "carton"])),
        ],
    },
    Spec {
        name: "agriculture",
        columns: [
            ("plot", Id("F")),
            ("sown", Time(2017)),
            ("observation", Notes),
            ("crop", Cat(&["wheat", "maize", "rice", "barley", "soy", "cotton"])),
            ("soil", Cat(&["clay", "loam", "sand", "silt", "peat"])),
            ("harvest", Ordinal(&["failed", "meager", "average", "bountiful"])),
            ("acreage", Num { lo: 0.5, hi: 400.0, decimals: 1, latent: 0.2 }),
            ("nitrogen", Num { lo: 5.0, hi: 140.0, decimals: 1, latent: 0.7 }),
            ("phosphorus", Num { lo: 2.0, hi: 90.0, decimals: 1, latent: 0.5 }),
            ("potassium", Num { lo: 10.0, hi: 250.0, decimals: 0, latent: 0.4 }),
            ("acidity", Num { lo: 4.5, hi: 8.5, decimals: 2, latent: 0.0 }),
            ("irrigation", Num { lo: 0.0, hi: 900.0, decimals: 0, latent: 0.8 }),
            ("workers", Int { lo: 1, hi: 30, latent: 0.3 }),
            ("tractors", Int { lo: 0, hi: 6, latent: 0.3 }),
            ("organic", Cat(YES_NO)),
        ],
    },
];

/// Columns of the distractor table used as a noise-clause source. No name
/// collides with a domain column.
const DISTRACTORS: [(&str, Gen); 40] = [
    ("altitude", Num { lo: 0.0, hi: 9000.0, decimals: 0, latent: 0.0 }),
    ("batchcode", Id("B")),
    ("blend", Cat(&["alpha", "beta", "gamma", "delta"])),
    ("brightness", Num { lo: 0.0, hi: 100.0, decimals: 1, latent: 0.0 }),
    ("calibrated", Time(2014)),
    ("colour", Cat(&["red", "green", "blue", "amber", "violet"])),
    ("density", Num { lo: 0.5, hi: 12.0, decimals: 2, latent: 0.0 }),
    ("depth", Num { lo: 0.0, hi: 400.0, decimals: 1, latent: 0.0 }),
    ("dialect", Cat(&["coastal", "inland", "northern", "southern"])),
    ("duration", Int { lo: 1, hi: 600, latent: 0.0 }),
    ("echoes", Int { lo: 0, hi: 15, latent: 0.0 }),
    ("fabric", Cat(&["wool", "linen", "silk", "denim", "nylon"])),
    ("flavour", Cat(&["sweet", "sour", "bitter", "salty", "umami"])),
    ("frequency", Num { lo: 20.0, hi: 20000.0, decimals: 0, latent: 0.0 }),
    ("glaze", Cat(&["matte", "gloss", "satin"])),
    ("grain", Num { lo: 0.1, hi: 5.0, decimals: 2, latent: 0.0 }),
    ("hue", Int { lo: 0, hi: 360, latent: 0.0 }),
    ("inkcolor", Cat(&["black", "navy", "sepia", "crimson"])),
    ("latitude", Num { lo: -60.0, hi: 70.0, decimals: 2, latent: 0.0 }),
    ("longitude", Num { lo: -180.0, hi: 180.0, decimals: 2, latent: 0.0 }),
    ("lumens", Int { lo: 100, hi: 4000, latent: 0.0 }),
    ("melody", Cat(&["major", "minor", "modal", "atonal"])),
    ("moisture", Num { lo: 0.0, hi: 60.0, decimals: 1, latent: 0.0 }),
    ("mood", Cat(&["calm", "tense", "cheerful", "gloomy"])),
    ("octave", Int { lo: 1, hi: 8, latent: 0.0 }),
    ("opacity", Num { lo: 0.0, hi: 1.0, decimals: 2, latent: 0.0 }),
    ("pattern", Cat(&["striped", "dotted", "plain", "checked"])),
    ("pitch", Num { lo: 80.0, hi: 1200.0, decimals: 1, latent: 0.0 }),
    ("recorded", Time(2011)),
    ("ripeness", Ordinal(&["green", "turning", "ripe", "overripe"])),
    ("salinity", Num { lo: 0.0, hi: 40.0, decimals: 2, latent: 0.0 }),
    ("scent", Cat(&["citrus", "floral", "woody", "musky"])),
    ("serial", Id("Z")),
    ("shade", Cat(&["light", "medium", "dark"])),
    ("sketch", Notes),
    ("texture", Cat(&["rough", "smooth", "grainy", "soft"])),
    ("thickness", Num { lo: 0.1, hi: 30.0, decimals: 1, latent: 0.0 }),
    ("turbidity", Num { lo: 0.0, hi: 500.0, decimals: 0, latent: 0.0 }),
    ("vintage", Int { lo: 1950, hi: 2020, latent: 0.0 }),
    ("wavelength", Num { lo: 380.0, hi: 750.0, decimals: 0, latent: 0.0 }),
];

pub const DISTRACTOR_ID: &str = "distractors";

const NOTE_WORDS: &[&str] = &[
    "checked", "pending", "reviewed", "urgent", "routine", "stable", "delayed", "complete",
    "flagged", "verified", "updated", "archived", "escalated", "noted", "cleared", "revisit",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub tables: usize,
    pub rows: usize,
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            tables: 10,
            rows: 500,
            missing_rate: 0.02,
            seed: 42,
        }
    }
}

/// Raw string tables: `(dataset id, header, records)`.
pub type RawTable = (String, Vec<String>, Vec<Vec<String>>);

fn squash(s: f64) -> f64 {
    1.0 / (1.0 + (-1.7 * s).exp())
}

fn cell<R: Rng>(g: Gen, row: usize, z: f64, rng: &mut R) -> String {
    let mixed = |rng: &mut R, w: f64| {
        let e: f64 = rng.sample(StandardNormal);
        w * z + (1.0 - w * w).max(0.0).sqrt() * e
    };
    match g {
        Id(prefix) => format!("{prefix}{:05}", row + 1),
        Time(year) => {
            let start = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid").and_hms_opt(0, 0, 0).expect("valid");
            let t = start + Duration::seconds(rng.random_range(0..3 * 365 * 86_400));
            t.format("%Y-%m-%d %H:%M:%S").to_string()
        }
        Notes => {
            let n = rng.random_range(2..=4);
            let words: Vec<&str> = (0..n).map(|_| NOTE_WORDS[rng.random_range(0..NOTE_WORDS.len())]).collect();
            let mut s = words.join(" ");
            s[..1].make_ascii_uppercase();
            s.push_str(if rng.random_bool(0.2) { ".." } else { "." });
            s
        }
        Cat(levels) => levels[rng.random_range(0..levels.len())].to_string(),
        Ordinal(levels) => {
            let s = mixed(rng, 0.85);
            let i = ((squash(s) * levels.len() as f64) as usize).min(levels.len() - 1);
            levels[i].to_string()
        }
        Num { lo, hi, decimals, latent } => {
            let x = lo + (hi - lo) * squash(mixed(rng, latent));
            crate::table::format_number(x, decimals)
        }
        Int { lo, hi, latent } => {
            let x = lo as f64 + (hi - lo) as f64 * squash(mixed(rng, latent));
            format!("{}", x.round() as i64)
        }
    }
}

fn generate_one(name: &str, columns: &[(&str, Gen)], opts: &SynthOptions) -> RawTable {
    let mut rng = rng_for(opts.seed, &format!("synth/{name}"));
    let header: Vec<String> = columns.iter().map(|(n, _)| n.to_string()).collect();
    let records = (0..opts.rows)
        .map(|r| {
            let z: f64 = rng.sample(StandardNormal);
            columns
                .iter()
                .map(|&(_, g)| {
                    let v = cell(g, r, z, &mut rng);
                    let droppable = !matches!(g, Id(_));
                    if droppable && rng.random_bool(opts.missing_rate) {
                        String::new()
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    (name.to_string(), header, records)
}

pub fn generate_raw(opts: &SynthOptions) -> Vec<RawTable> {
    SPECS
        .iter()
        .take(opts.tables.min(SPECS.len()))
        .map(|spec| generate_one(spec.name, &spec.columns, opts))
        .collect()
}

/// A 40-column table of unrelated attributes, `opts.rows` rows.
pub fn generate_distractors(opts: &SynthOptions) -> RawTable {
    generate_one(DISTRACTOR_ID, &DISTRACTORS, opts)
}

pub fn generate_tables(opts: &SynthOptions) -> Result<Vec<Table>> {
    generate_raw(opts)
        .into_iter()
        .map(|(id, header, records)| infer_schema(&id, &header, &records))
        .collect()
}

fn write_csv(path: &Path, header: &[String], records: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in records {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one CSV per table into `dir` and returns the paths.
pub fn write_csvs(opts: &SynthOptions, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (id, header, records) in generate_raw(opts) {
        let path = dir.join(format!("{id}.csv"));
        write_csv(&path, &header, &records)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn write_distractors(opts: &SynthOptions, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let (_, header, records) = generate_distractors(opts);
    write_csv(path, &header, &records)
}
