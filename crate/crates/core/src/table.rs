//! Typed tables: ingestion, value normalization, row serialization and
//! corpus assembly.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng_for;

/// Default number of decimals kept when rendering numbers.
pub const DEFAULT_PRECISION: u32 = 2;
/// Default per-dataset document cap for the global corpus.
pub const DEFAULT_CAP: usize = 10_000;
/// Default whitespace-token limit for serialized rows.
pub const DEFAULT_MAX_WORDS: usize = 512;

const MISSING_RENDER: &str = "unknown";
const ISO_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Missing,
    Number,
    Text,
    Timestamp,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ColumnKind::Missing => "missing",
            ColumnKind::Number => "number",
            ColumnKind::Text => "text",
            ColumnKind::Timestamp => "timestamp",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Missing,
    Number(f64),
    Text(String),
    Timestamp(NaiveDateTime),
}

impl CellValue {
    pub fn kind(&self) -> ColumnKind {
        match self {
            CellValue::Missing => ColumnKind::Missing,
            CellValue::Number(_) => ColumnKind::Number,
            CellValue::Text(_) => ColumnKind::Text,
            CellValue::Timestamp(_) => ColumnKind::Timestamp,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            CellValue::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, CellValue::Missing)
    }

    /// Parses a raw field as the given kind. Missing markers always map to
    /// [`CellValue::Missing`]; `None` means the field does not parse.
    pub fn parse_as(raw: &str, kind: ColumnKind) -> Option<CellValue> {
        if is_missing_marker(raw) {
            return Some(CellValue::Missing);
        }
        match kind {
            ColumnKind::Missing => None,
            ColumnKind::Number => parse_number(raw).map(CellValue::Number),
            ColumnKind::Timestamp => parse_timestamp(raw).map(CellValue::Timestamp),
            ColumnKind::Text => Some(CellValue::Text(raw.to_string())),
        }
    }

    /// The value after normalization, i.e. what `parse(normalize_value(self))`
    /// would give back. Documents store canonical values so that symbolic
    /// checks and rendered text agree.
    pub fn canonical(&self, precision: u32) -> CellValue {
        match self {
            CellValue::Missing => CellValue::Missing,
            CellValue::Number(x) => CellValue::Number(round_to(*x, precision)),
            CellValue::Text(s) => {
                let t = clean_text(s);
                if t.is_empty() {
                    CellValue::Missing
                } else {
                    CellValue::Text(t.to_string())
                }
            }
            CellValue::Timestamp(t) => {
                CellValue::Timestamp(t.date().and_time(
                    chrono::NaiveTime::from_hms_opt(
                        chrono::Timelike::hour(t),
                        chrono::Timelike::minute(t),
                        chrono::Timelike::second(t),
                    )
                    .expect("valid time"),
                ))
            }
        }
    }
}

/// Empty strings plus the usual spellings of NaN/null/None.
pub fn is_missing_marker(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty()
        || t.eq_ignore_ascii_case("nan")
        || t.eq_ignore_ascii_case("null")
        || t.eq_ignore_ascii_case("none")
}

pub fn parse_number(raw: &str) -> Option<f64> {
    let t = raw.trim();
    // Rust accepts "inf"/"infinity"; those are not table numbers.
    if t.is_empty() || t.chars().any(|c| c.is_ascii_alphabetic() && c != 'e' && c != 'E') {
        return None;
    }
    t.parse::<f64>().ok().filter(|x| x.is_finite())
}

pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    const DATETIME: &[&str] = &[
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
        "%Y/%m/%d %H:%M:%S",
    ];
    const DATE: &[&str] = &["%Y-%m-%d", "%Y/%m/%d"];
    let t = raw.trim();
    let t = t.strip_suffix('Z').unwrap_or(t);
    DATETIME
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(t, f).ok())
        .or_else(|| {
            DATE.iter()
                .find_map(|f| NaiveDate::parse_from_str(t, f).ok())
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

fn clean_text(s: &str) -> &str {
    s.trim().trim_end_matches('.').trim_end()
}

/// Renders `x` rounded half away from zero to `precision` decimals, with
/// trailing fractional zeros removed. Rounding is done on the shortest
/// round-trip decimal expansion, so `2.675` becomes `2.68`.
pub fn format_number(x: f64, precision: u32) -> String {
    let repr = format!("{}", x.abs());
    let (int_part, frac_part) = match repr.split_once('.') {
        Some((i, f)) => (i, f),
        None => (repr.as_str(), ""),
    };
    let p = precision as usize;
    let mut digits: Vec<u8> = int_part.bytes().collect();
    let int_len = digits.len();
    digits.extend(frac_part.bytes().take(p));
    digits.resize(int_len + p, b'0');

    if frac_part.len() > p && frac_part.as_bytes()[p] >= b'5' {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - p;
    let int_str = std::str::from_utf8(&digits[..split]).expect("ascii digits");
    let frac_str = std::str::from_utf8(&digits[split..])
        .expect("ascii digits")
        .trim_end_matches('0');

    let mut out = String::with_capacity(digits.len() + 2);
    let is_zero = digits.iter().all(|&d| d == b'0');
    if x.is_sign_negative() && !is_zero {
        out.push('-');
    }
    out.push_str(int_str);
    if !frac_str.is_empty() {
        out.push('.');
        out.push_str(frac_str);
    }
    out
}

/// `x` rounded exactly as [`format_number`] renders it.
pub fn round_to(x: f64, precision: u32) -> f64 {
    format_number(x, precision)
        .parse()
        .expect("format_number emits a valid float")
}

/// Cell normalization to the string used inside clauses.
pub fn normalize_value(cell: &CellValue, precision: u32) -> String {
    match cell {
        CellValue::Missing => MISSING_RENDER.to_string(),
        CellValue::Number(x) => format_number(*x, precision),
        CellValue::Timestamp(t) => t.format(ISO_FORMAT).to_string(),
        CellValue::Text(s) => {
            let t = clean_text(s);
            if t.is_empty() {
                MISSING_RENDER.to_string()
            } else {
                t.to_string()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub unique_count: usize,
}

pub type Row = Vec<CellValue>;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub dataset_id: String,
    pub columns: Vec<ColumnMeta>,
    pub rows: Vec<Row>,
}

/// Text cells are stored raw, numbers and timestamps canonically, and
/// missing cells as `null`.
#[derive(Serialize, Deserialize)]
struct TableRecord {
    dataset_id: String,
    columns: Vec<ColumnMeta>,
    rows: Vec<Vec<Option<String>>>,
}

impl Serialize for Table {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TableRecord {
            dataset_id: self.dataset_id.clone(),
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|c| match c {
                            CellValue::Missing => None,
                            CellValue::Text(t) => Some(t.clone()),
                            other => Some(render_canonical(other)),
                        })
                        .collect()
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Table {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let rec = TableRecord::deserialize(d)?;
        let mut rows = Vec::with_capacity(rec.rows.len());
        for (i, r) in rec.rows.into_iter().enumerate() {
            if r.len() != rec.columns.len() {
                return Err(D::Error::custom(format!("row {i} has {} cells", r.len())));
            }
            let row = r
                .into_iter()
                .zip(&rec.columns)
                .map(|(c, meta)| match c {
                    None => Ok(CellValue::Missing),
                    Some(raw) => CellValue::parse_as(&raw, meta.kind)
                        .ok_or_else(|| D::Error::custom(format!("`{raw}` is not a {}", meta.kind))),
                })
                .collect::<std::result::Result<Row, _>>()?;
            rows.push(row);
        }
        Ok(Table {
            dataset_id: rec.dataset_id,
            columns: rec.columns,
            rows,
        })
    }
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

/// Infers a kind per column (number > timestamp > text) and builds a typed
/// table. Empty headers are named `Unnamed: {index}`.
pub fn infer_schema(
    dataset_id: &str,
    header: &[String],
    records: &[Vec<String>],
) -> Result<Table> {
    let mut names = Vec::with_capacity(header.len());
    let mut seen = HashSet::new();
    for (i, h) in header.iter().enumerate() {
        let name = match h.trim() {
            "" => format!("Unnamed: {i}"),
            t => t.to_string(),
        };
        if !seen.insert(name.clone()) {
            return Err(Error::Schema(format!(
                "duplicate column `{name}` in dataset `{dataset_id}`"
            )));
        }
        names.push(name);
    }
    for (row, rec) in records.iter().enumerate() {
        if rec.len() != header.len() {
            return Err(Error::Structural {
                row,
                found: rec.len(),
                expected: header.len(),
            });
        }
    }

    let mut columns = Vec::with_capacity(names.len());
    let mut rows: Vec<Row> = vec![Vec::with_capacity(names.len()); records.len()];
    for (j, name) in names.into_iter().enumerate() {
        let present = || {
            records
                .iter()
                .map(move |r| r[j].as_str())
                .filter(|v| !is_missing_marker(v))
        };
        let kind = if present().all(|v| parse_number(v).is_some()) {
            ColumnKind::Number
        } else if present().all(|v| parse_timestamp(v).is_some()) {
            ColumnKind::Timestamp
        } else {
            ColumnKind::Text
        };
        let mut uniques = BTreeSet::new();
        for (i, rec) in records.iter().enumerate() {
            let cell = CellValue::parse_as(&rec[j], kind).expect("kind chosen so every cell parses");
            if !cell.is_missing() {
                uniques.insert(normalize_value(&cell, DEFAULT_PRECISION));
            }
            rows[i].push(cell);
        }
        columns.push(ColumnMeta {
            name,
            kind,
            unique_count: uniques.len(),
        });
    }
    Ok(Table {
        dataset_id: dataset_id.to_string(),
        columns,
        rows,
    })
}

fn decode_field(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        // Latin-1 maps each byte to the code point of the same value.
        Err(_) => bytes.iter().map(|&b| char::from(b)).collect(),
    }
}

/// Reads a delimited file whose first record is the header. Fields that are
/// not valid UTF-8 are decoded as Latin-1.
pub fn read_delimited(path: &Path, delimiter: u8, dataset_id: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut records = reader.byte_records();
    let header: Vec<String> = match records.next() {
        Some(rec) => rec?.iter().map(decode_field).collect(),
        None => return Err(Error::Schema(format!("{}: missing header", path.display()))),
    };
    let mut rows = Vec::new();
    for rec in records {
        rows.push(rec?.iter().map(decode_field).collect::<Vec<_>>());
    }
    infer_schema(dataset_id, &header, &rows)
}

/// Concatenates `The {h} is {v}.` clauses for every non-excluded column.
pub fn serialize_row(
    row: &[CellValue],
    table: &Table,
    excluded: &BTreeSet<String>,
    precision: u32,
) -> Result<String> {
    if let Some(bad) = excluded.iter().find(|e| table.column_index(e).is_none()) {
        return Err(Error::Argument(format!("excluded column `{bad}` not in table")));
    }
    let clauses: Vec<String> = table
        .columns
        .iter()
        .zip(row)
        .filter(|(c, _)| !excluded.contains(&c.name))
        .map(|(c, v)| clause(&c.name, &normalize_value(v, precision)))
        .collect();
    if clauses.is_empty() {
        return Err(Error::EmptySerialization);
    }
    Ok(clauses.join(" "))
}

pub fn clause(name: &str, value: &str) -> String {
    format!("The {name} is {value}.")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocCell {
    pub name: String,
    pub value: CellValue,
}

#[derive(Serialize, Deserialize)]
struct DocCellRecord {
    name: String,
    kind: ColumnKind,
    value: String,
}

impl Serialize for DocCell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DocCellRecord {
            name: self.name.clone(),
            kind: self.value.kind(),
            value: render_canonical(&self.value),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DocCell {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let rec = DocCellRecord::deserialize(d)?;
        let value = match rec.kind {
            ColumnKind::Missing => CellValue::Missing,
            ColumnKind::Text => CellValue::Text(rec.value),
            ColumnKind::Number => CellValue::Number(
                parse_number(&rec.value)
                    .ok_or_else(|| D::Error::custom(format!("bad number `{}`", rec.value)))?,
            ),
            ColumnKind::Timestamp => CellValue::Timestamp(
                parse_timestamp(&rec.value)
                    .ok_or_else(|| D::Error::custom(format!("bad timestamp `{}`", rec.value)))?,
            ),
        };
        Ok(DocCell {
            name: rec.name,
            value,
        })
    }
}

/// Renders a value that is already canonical: numbers print their shortest
/// decimal form with no extra rounding.
pub fn render_canonical(v: &CellValue) -> String {
    match v {
        CellValue::Number(x) => {
            if *x == 0.0 {
                "0".to_string()
            } else {
                format!("{x}")
            }
        }
        other => normalize_value(other, DEFAULT_PRECISION),
    }
}

/// A serialized row together with the canonical cells it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub dataset_id: String,
    pub source_row: usize,
    pub text: String,
    #[serde(rename = "columns")]
    pub cells: Vec<DocCell>,
}

impl Document {
    /// Builds the document for `table.rows[row]` with `excluded` columns left
    /// out of both the text and the stored cells.
    pub fn from_row(
        doc_id: String,
        table: &Table,
        row: usize,
        excluded: &BTreeSet<String>,
        precision: u32,
    ) -> Result<Document> {
        let source = table
            .rows
            .get(row)
            .ok_or_else(|| Error::Argument(format!("row {row} out of range")))?;
        let text = serialize_row(source, table, excluded, precision)?;
        let cells = table
            .columns
            .iter()
            .zip(source)
            .filter(|(c, _)| !excluded.contains(&c.name))
            .map(|(c, v)| DocCell {
                name: c.name.clone(),
                value: v.canonical(precision),
            })
            .collect();
        Ok(Document {
            doc_id,
            dataset_id: table.dataset_id.clone(),
            source_row: row,
            text,
            cells,
        })
    }

    pub fn cell(&self, name: &str) -> Option<&CellValue> {
        self.cells.iter().find(|c| c.name == name).map(|c| &c.value)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.cells.iter().map(|c| c.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub per_dataset_counts: BTreeMap<String, usize>,
    pub cap: usize,
}

impl Corpus {
    pub fn from_documents(documents: Vec<Document>, cap: usize) -> Result<Corpus> {
        let mut ids = HashSet::new();
        let mut per_dataset_counts = BTreeMap::new();
        for d in &documents {
            if !ids.insert(d.doc_id.as_str()) {
                return Err(Error::DataConsistency(format!("duplicate doc_id `{}`", d.doc_id)));
            }
            *per_dataset_counts.entry(d.dataset_id.clone()).or_insert(0) += 1;
        }
        if let Some((id, n)) = per_dataset_counts.iter().find(|(_, &n)| n > cap) {
            return Err(Error::DataConsistency(format!(
                "dataset `{id}` has {n} documents, above cap {cap}"
            )));
        }
        Ok(Corpus {
            documents,
            per_dataset_counts,
            cap,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn doc_index(&self) -> BTreeMap<&str, usize> {
        self.documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.as_str(), i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusOptions {
    pub cap: usize,
    pub max_words: usize,
    pub precision: u32,
    pub seed: u64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            cap: DEFAULT_CAP,
            max_words: DEFAULT_MAX_WORDS,
            precision: DEFAULT_PRECISION,
            seed: 42,
        }
    }
}

pub fn doc_id_for(dataset_id: &str, row: usize) -> String {
    format!("{dataset_id}:{row}")
}

/// Serializes every row, drops rows above `max_words`, and samples at most
/// `cap` documents per dataset. Within a dataset documents keep row order.
pub fn build_corpus(tables: &[Table], opts: &CorpusOptions) -> Result<Corpus> {
    if opts.cap == 0 {
        return Err(Error::Argument("cap must be at least 1".into()));
    }
    if tables.is_empty() {
        return Err(Error::Argument("no tables given".into()));
    }
    let none = BTreeSet::new();
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for table in tables {
        if !seen.insert(table.dataset_id.as_str()) {
            return Err(Error::Schema(format!("duplicate dataset id `{}`", table.dataset_id)));
        }
        if table.rows.is_empty() {
            log::warn!("dataset `{}` is empty; it contributes no documents", table.dataset_id);
            continue;
        }
        let mut survivors = Vec::with_capacity(table.rows.len());
        for i in 0..table.rows.len() {
            let doc = Document::from_row(doc_id_for(&table.dataset_id, i), table, i, &none, opts.precision)?;
            if doc.text.split_whitespace().count() <= opts.max_words {
                survivors.push(doc);
            }
        }
        if survivors.len() > opts.cap {
            let mut order: Vec<usize> = (0..survivors.len()).collect();
            let mut rng = rng_for(opts.seed, &format!("corpus/{}", table.dataset_id));
            order.shuffle(&mut rng);
            order.truncate(opts.cap);
            order.sort_unstable();
            let mut slots: Vec<Option<Document>> = survivors.into_iter().map(Some).collect();
            survivors = order.into_iter().map(|i| slots[i].take().expect("unique")).collect();
        }
        documents.extend(survivors);
    }
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Corpus::from_documents(documents, opts.cap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn one_column(values: &[&str]) -> Table {
        let records: Vec<Vec<String>> = values.iter().map(|v| vec![v.to_string()]).collect();
        infer_schema("t", &strings(&["c"]), &records).unwrap()
    }

    #[test]
    fn kind_inference() {
        assert_eq!(one_column(&["1", "2", "3"]).columns[0].kind, ColumnKind::Number);
        assert_eq!(one_column(&["1", "a"]).columns[0].kind, ColumnKind::Text);
        assert_eq!(
            one_column(&["2025-03-01", "2024-01-15"]).columns[0].kind,
            ColumnKind::Timestamp
        );
        let t = one_column(&["1.5", "NaN", "null", "", "None"]);
        assert_eq!(t.columns[0].kind, ColumnKind::Number);
        assert_eq!(t.columns[0].unique_count, 1);
        assert!(t.rows[1..].iter().all(|r| r[0].is_missing()));
        assert_eq!(one_column(&["inf", "2"]).columns[0].kind, ColumnKind::Text);
    }

    #[test]
    fn ragged_and_duplicate_headers() {
        let err = infer_schema(
            "t",
            &strings(&["a", "b"]),
            &[strings(&["1", "2"]), strings(&["1"])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Structural { row: 1, found: 1, expected: 2 }));
        let err = infer_schema("t", &strings(&["a", " a "]), &[]).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn blank_header_becomes_unnamed() {
        let t = infer_schema("t", &strings(&["", "x"]), &[strings(&["1", "2"])]).unwrap();
        assert_eq!(t.columns[0].name, "Unnamed: 0");
    }

    #[test]
    fn normalization_examples() {
        let ts = parse_timestamp("2025-03-01 00:00:00").unwrap();
        assert_eq!(normalize_value(&CellValue::Number(3.14159), 2), "3.14");
        assert_eq!(normalize_value(&CellValue::Missing, 2), "unknown");
        assert_eq!(normalize_value(&CellValue::Timestamp(ts), 2), "2025-03-01T00:00:00");
        assert_eq!(normalize_value(&CellValue::Number(5.0), 2), "5");
        assert_eq!(normalize_value(&CellValue::Text("  Done. ".into()), 2), "Done");
    }

    #[test]
    fn number_rounding_rules() {
        assert_eq!(format_number(2.675, 2), "2.68");
        assert_eq!(format_number(-2.675, 2), "-2.68");
        assert_eq!(format_number(0.004, 2), "0");
        assert_eq!(format_number(-0.004, 2), "0");
        assert_eq!(format_number(9.999, 2), "10");
        assert_eq!(format_number(99.995, 2), "100");
        assert_eq!(format_number(50.2, 2), "50.2");
        assert_eq!(format_number(1234.5, 0), "1235");
        assert_eq!(format_number(1e-9, 3), "0");
        assert_eq!(format_number(1e21, 2), "1000000000000000000000");
    }

    #[test]
    fn fractional_timestamps_and_suffixes() {
        let t = parse_timestamp("2024-01-15T10:20:30.250Z").unwrap();
        assert_eq!(normalize_value(&CellValue::Timestamp(t), 2), "2024-01-15T10:20:30");
        assert!(parse_timestamp("2024/01/15").is_some());
        assert!(parse_timestamp("15 Jan").is_none());
    }

    fn status_price() -> Table {
        infer_schema(
            "shop",
            &strings(&["Status", "Price", "Note"]),
            &[strings(&["Active", "50.25", "Done."])],
        )
        .unwrap()
    }

    #[test]
    fn serialization_examples() {
        let t = status_price();
        let none = BTreeSet::new();
        assert_eq!(
            serialize_row(&t.rows[0], &t, &none, 2).unwrap(),
            "The Status is Active. The Price is 50.25. The Note is Done."
        );
        let ex: BTreeSet<String> = ["Price".to_string(), "Note".to_string()].into();
        assert_eq!(serialize_row(&t.rows[0], &t, &ex, 2).unwrap(), "The Status is Active.");
        let all: BTreeSet<String> = t.column_names().map(String::from).collect();
        assert!(matches!(
            serialize_row(&t.rows[0], &t, &all, 2),
            Err(Error::EmptySerialization)
        ));
        let bogus: BTreeSet<String> = ["Nope".to_string()].into();
        assert!(serialize_row(&t.rows[0], &t, &bogus, 2).is_err());
    }

    #[test]
    fn latin1_fallback() {
        assert_eq!(decode_field(b"caf\xe9"), "café");
        assert_eq!(decode_field("café".as_bytes()), "café");
    }

    fn numbered(id: &str, n: usize) -> Table {
        let records: Vec<Vec<String>> = (0..n).map(|i| vec![i.to_string()]).collect();
        infer_schema(id, &strings(&["n"]), &records).unwrap()
    }

    #[test]
    fn corpus_cap_and_counts() {
        let opts = CorpusOptions {
            cap: 10_000,
            ..CorpusOptions::default()
        };
        let big = build_corpus(&[numbered("big", 15_000)], &opts).unwrap();
        assert_eq!(big.len(), 10_000);
        assert_eq!(big.per_dataset_counts["big"], 10_000);

        let small = build_corpus(&[numbered("a", 3), numbered("b", 3)], &opts).unwrap();
        assert_eq!(small.len(), 6);

        let with_empty = build_corpus(&[numbered("a", 3), numbered("e", 0)], &opts).unwrap();
        assert_eq!(with_empty.len(), 3);
        assert!(!with_empty.per_dataset_counts.contains_key("e"));

        assert!(matches!(
            build_corpus(&[numbered("e", 0)], &opts),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn corpus_word_filter() {
        let opts = CorpusOptions {
            max_words: 3,
            ..CorpusOptions::default()
        };
        let t = status_price();
        assert!(matches!(build_corpus(&[t], &opts), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn corpus_is_seed_deterministic() {
        let opts = CorpusOptions {
            cap: 50,
            seed: 9,
            ..CorpusOptions::default()
        };
        let a = build_corpus(&[numbered("x", 400)], &opts).unwrap();
        let b = build_corpus(&[numbered("x", 400)], &opts).unwrap();
        assert_eq!(a, b);
        let c = build_corpus(&[numbered("x", 400)], &CorpusOptions { seed: 10, ..opts }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn doc_cells_round_trip_json() {
        let t = infer_schema(
            "d",
            &strings(&["a", "b", "c", "d"]),
            &[strings(&["3.14159", "x.", "", "2025-03-01"])],
        )
        .unwrap();
        let doc = Document::from_row("d:0".into(), &t, 0, &BTreeSet::new(), 2).unwrap();
        let json = serde_json::to_string(&doc).unwrap();
        assert!(json.contains(r#"{"name":"a","kind":"number","value":"3.14"}"#));
        let back: Document = serde_json::from_str(&json).unwrap();
        assert_eq!(back, doc);
    }
}
