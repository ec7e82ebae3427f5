//! Seed-based query generation, template rendering and symbolic
//! verification against the corpus.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, IteratorRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{format_number, normalize_value, CellValue, ColumnKind, Corpus, Document};
use crate::util::{derive_seed, rng_for};

/// Numeric equality and thresholds live at this many decimals.
pub const CONSTRAINT_PRECISION: u32 = 2;
/// Smallest target set a retained query may have.
pub const MIN_TARGET_SET: usize = 5;
/// Categorical constraints only use text columns with at most this many
/// distinct values within their dataset.
pub const MAX_CATEGORICAL_VALUES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Eq,
    Gt,
    Lt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub column: String,
    pub op: Op,
    #[serde(with = "constraint_value")]
    pub value: CellValue,
}

mod constraint_value {
    use super::CellValue;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &CellValue, s: S) -> Result<S::Ok, S::Error> {
        match v {
            CellValue::Number(x) => s.serialize_f64(*x),
            CellValue::Text(t) => s.serialize_str(t),
            other => Err(serde::ser::Error::custom(format!(
                "constraint value must be number or text, got {}",
                other.kind()
            ))),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CellValue, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(CellValue::Number)
                .ok_or_else(|| D::Error::custom("number out of range")),
            serde_json::Value::String(s) => Ok(CellValue::Text(s)),
            other => Err(D::Error::custom(format!("bad constraint value {other}"))),
        }
    }
}

impl Constraint {
    pub fn new(column: impl Into<String>, op: Op, value: CellValue) -> Result<Constraint> {
        let column = column.into();
        match (&value, op) {
            (CellValue::Number(x), _) if !x.is_finite() => {
                Err(Error::Argument(format!("non-finite threshold on `{column}`")))
            }
            (CellValue::Number(_), _) | (CellValue::Text(_), Op::Eq) => {
                Ok(Constraint { column, op, value })
            }
            (v, op) => Err(Error::Argument(format!(
                "operator {op:?} not allowed on {} value for `{column}`",
                v.kind()
            ))),
        }
    }

    pub fn eq_text(column: &str, value: &str) -> Constraint {
        Constraint {
            column: column.into(),
            op: Op::Eq,
            value: CellValue::Text(value.into()),
        }
    }

    pub fn numeric(column: &str, op: Op, value: f64) -> Constraint {
        Constraint {
            column: column.into(),
            op,
            value: CellValue::Number(value),
        }
    }

    fn rendered_value(&self) -> String {
        normalize_value(&self.value, CONSTRAINT_PRECISION)
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.value, CellValue::Number(_))
    }

    /// Truth of this single constraint on one cell.
    pub fn holds(&self, cell: &CellValue) -> bool {
        match (&self.value, cell) {
            (CellValue::Number(t), CellValue::Number(v)) => match self.op {
                Op::Eq => {
                    format_number(*v, CONSTRAINT_PRECISION) == format_number(*t, CONSTRAINT_PRECISION)
                }
                Op::Gt => v > t,
                Op::Lt => v < t,
            },
            (CellValue::Text(t), CellValue::Text(_)) if self.op == Op::Eq => {
                normalize_value(cell, CONSTRAINT_PRECISION)
                    == normalize_value(&CellValue::Text(t.clone()), CONSTRAINT_PRECISION)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryType {
    Categorical,
    Numeric,
    Mixed,
}

impl QueryType {
    pub const ALL: [QueryType; 3] = [QueryType::Categorical, QueryType::Numeric, QueryType::Mixed];

    pub fn as_str(&self) -> &'static str {
        match self {
            QueryType::Categorical => "categorical",
            QueryType::Numeric => "numeric",
            QueryType::Mixed => "mixed",
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The twelve query phrasings. `T1` is the canonical benchmark form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Template {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
    T8,
    T9,
    T10,
    T11,
    T12,
}

impl Template {
    pub const ALL: [Template; 12] = [
        Template::T1,
        Template::T2,
        Template::T3,
        Template::T4,
        Template::T5,
        Template::T6,
        Template::T7,
        Template::T8,
        Template::T9,
        Template::T10,
        Template::T11,
        Template::T12,
    ];

    pub fn index(&self) -> usize {
        Template::ALL.iter().position(|t| t == self).expect("listed") + 1
    }

    pub fn name(&self) -> &'static str {
        match self {
            Template::T1 => "Original",
            Template::T2 => "SQL Style",
            Template::T3 => "Question",
            Template::T4 => "Command",
            Template::T5 => "Filter",
            Template::T6 => "Search",
            Template::T7 => "Descriptive",
            Template::T8 => "Concise",
            Template::T9 => "JSON Style",
            Template::T10 => "Casual",
            Template::T11 => "List Style",
            Template::T12 => "Lookup",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.index())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Template> {
        s.strip_prefix('T')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|n| (1..=12).contains(n))
            .map(|n| Template::ALL[n - 1])
            .ok_or_else(|| Error::Argument(format!("unknown template `{s}`")))
    }
}

impl Serialize for Template {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Template {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Renders a constraint conjunction in one of the twelve styles.
pub fn render_query(constraints: &[Constraint], template: Template) -> String {
    let parts = |eq: &dyn Fn(&str, &str) -> String,
                 gt: &dyn Fn(&str, &str) -> String,
                 lt: &dyn Fn(&str, &str) -> String|
     -> Vec<String> {
        constraints
            .iter()
            .map(|c| {
                let v = c.rendered_value();
                match c.op {
                    Op::Eq => eq(&c.column, &v),
                    Op::Gt => gt(&c.column, &v),
                    Op::Lt => lt(&c.column, &v),
                }
            })
            .collect()
    };
    match template {
        Template::T1 => format!(
            "Find records where {}",
            parts(
                &|c, v| format!("{c} is {v}"),
                &|c, v| format!("{c} greater than {v}"),
                &|c, v| format!("{c} less than {v}"),
            )
            .join(" and ")
        ),
        Template::T2 => {
            let sql: Vec<String> = constraints
                .iter()
                .map(|c| {
                    let v = match &c.value {
                        CellValue::Text(_) => format!("'{}'", c.rendered_value().replace('\'', "''")),
                        _ => c.rendered_value(),
                    };
                    let op = match c.op {
                        Op::Eq => "=",
                        Op::Gt => ">",
                        Op::Lt => "<",
                    };
                    format!("{} {op} {v}", c.column)
                })
                .collect();
            format!("SELECT * FROM table WHERE {}", sql.join(" AND "))
        }
        Template::T3 => format!(
            "Which records have {}?",
            parts(
                &|c, v| format!("{c} equal to {v}"),
                &|c, v| format!("{c} greater than {v}"),
                &|c, v| format!("{c} less than {v}"),
            )
            .join(" and ")
        ),
        Template::T4 => format!(
            "Get all entries with {}",
            parts(
                &|c, v| format!("{c} of {v}"),
                &|c, v| format!("{c} above {v}"),
                &|c, v| format!("{c} below {v}"),
            )
            .join(" and ")
        ),
        Template::T5 => format!(
            "Filter: {}",
            parts(
                &|c, v| format!("{c}=={v}"),
                &|c, v| format!("{c}>{v}"),
                &|c, v| format!("{c}<{v}"),
            )
            .join(", ")
        ),
        Template::T6 => format!(
            "Search for records: {}",
            parts(
                &|c, v| format!("{c}:{v}"),
                &|c, v| format!("{c}:>{v}"),
                &|c, v| format!("{c}:<{v}"),
            )
            .join(" ")
        ),
        Template::T7 => format!(
            "I need data where {}",
            parts(
                &|c, v| format!("the {c} is {v}"),
                &|c, v| format!("the {c} is more than {v}"),
                &|c, v| format!("the {c} is less than {v}"),
            )
            .join(" and ")
        ),
        Template::T8 => parts(
            &|c, v| format!("{c} == {v}"),
            &|c, v| format!("{c} > {v}"),
            &|c, v| format!("{c} < {v}"),
        )
        .join(" | "),
        Template::T9 => {
            let items: Vec<String> = constraints
                .iter()
                .map(|c| {
                    let key = serde_json::to_string(&c.column).expect("string");
                    let val = match &c.value {
                        CellValue::Text(_) => serde_json::to_string(&c.rendered_value()).expect("string"),
                        _ => c.rendered_value(),
                    };
                    match c.op {
                        Op::Eq => format!("{key}: {val}"),
                        Op::Gt => format!("{key}: {{\"$gt\": {val}}}"),
                        Op::Lt => format!("{key}: {{\"$lt\": {val}}}"),
                    }
                })
                .collect();
            format!("{{{}}}", items.join(", "))
        }
        Template::T10 => format!(
            "Show me rows that have {}",
            parts(
                &|c, v| format!("{c} as {v}"),
                &|c, v| format!("{c} over {v}"),
                &|c, v| format!("{c} under {v}"),
            )
            .join(" and ")
        ),
        Template::T11 => {
            let items: Vec<String> = parts(
                &|c, v| format!("{c} equals {v}"),
                &|c, v| format!("{c} > {v}"),
                &|c, v| format!("{c} < {v}"),
            )
            .into_iter()
            .enumerate()
            .map(|(i, p)| format!("{}. {p}", i + 1))
            .collect();
            format!("Conditions: {}", items.join("; "))
        }
        Template::T12 => format!(
            "Look up records matching: {}",
            parts(
                &|c, v| format!("{c}={v}"),
                &|c, v| format!("{c}>{v}"),
                &|c, v| format!("{c}<{v}"),
            )
            .join(", ")
        ),
    }
}

/// Conjunction over constraints; missing or wrongly typed cells fail.
pub fn satisfies(row: &Document, constraints: &[Constraint]) -> bool {
    constraints
        .iter()
        .all(|c| row.cell(&c.column).is_some_and(|cell| c.holds(cell)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub qid: String,
    pub qtype: QueryType,
    pub k: usize,
    pub template: Template,
    pub text: String,
    pub constraints: Vec<Constraint>,
    pub seed_doc_id: String,
}

impl Query {
    /// The same intent phrased with another template.
    pub fn rephrased(&self, template: Template) -> Query {
        Query {
            template,
            text: render_query(&self.constraints, template),
            ..self.clone()
        }
    }
}

/// Relevant document ids per query id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QrelSet(pub BTreeMap<String, BTreeSet<String>>);

impl QrelSet {
    pub fn get(&self, qid: &str) -> Option<&BTreeSet<String>> {
        self.0.get(qid)
    }

    pub fn insert(&mut self, qid: String, docs: BTreeSet<String>) {
        self.0.insert(qid, docs);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0
            .iter()
            .flat_map(|(q, ds)| ds.iter().map(move |d| (q.as_str(), d.as_str())))
    }
}

/// Columns usable for constraints, per dataset.
#[derive(Debug, Clone, Default)]
pub struct EligibleColumns {
    pub numeric: BTreeMap<String, BTreeSet<String>>,
    pub categorical: BTreeMap<String, BTreeSet<String>>,
}

impl EligibleColumns {
    /// Number columns are numeric-eligible; text columns with between 2 and
    /// [`MAX_CATEGORICAL_VALUES`] distinct values are categorical-eligible.
    pub fn from_corpus(corpus: &Corpus) -> EligibleColumns {
        let mut kinds: BTreeMap<(&str, &str), BTreeSet<ColumnKind>> = BTreeMap::new();
        let mut values: BTreeMap<(&str, &str), BTreeSet<String>> = BTreeMap::new();
        for d in &corpus.documents {
            for c in &d.cells {
                let key = (d.dataset_id.as_str(), c.name.as_str());
                if !c.value.is_missing() {
                    kinds.entry(key).or_default().insert(c.value.kind());
                    if let CellValue::Text(t) = &c.value {
                        values.entry(key).or_default().insert(t.clone());
                    }
                }
            }
        }
        let mut out = EligibleColumns::default();
        for ((ds, col), ks) in kinds {
            if ks.len() != 1 {
                continue;
            }
            match ks.into_iter().next().expect("one kind") {
                ColumnKind::Number => {
                    out.numeric.entry(ds.to_string()).or_default().insert(col.to_string());
                }
                ColumnKind::Text => {
                    let n = values.get(&(ds, col)).map_or(0, |v| v.len());
                    if (2..=MAX_CATEGORICAL_VALUES).contains(&n) {
                        out.categorical
                            .entry(ds.to_string())
                            .or_default()
                            .insert(col.to_string());
                    }
                }
                _ => {}
            }
        }
        out
    }

    fn for_doc<'a>(&self, doc: &'a Document) -> (Vec<&'a str>, Vec<&'a str>) {
        let num = self.numeric.get(&doc.dataset_id);
        let cat = self.categorical.get(&doc.dataset_id);
        let mut n = Vec::new();
        let mut c = Vec::new();
        for cell in doc.cells.iter().filter(|c| !c.value.is_missing()) {
            if num.is_some_and(|s| s.contains(&cell.name)) && cell.value.as_number().is_some() {
                n.push(cell.name.as_str());
            } else if cat.is_some_and(|s| s.contains(&cell.name)) {
                c.push(cell.name.as_str());
            }
        }
        (n, c)
    }
}

/// Threshold `round(v·u, 2)` for a gt/lt constraint, or `None` when the
/// seed value would not satisfy it.
pub fn perturb_threshold(value: f64, op: Op, u: f64) -> Option<f64> {
    let t = crate::table::round_to(value * u, CONSTRAINT_PRECISION);
    let ok = match op {
        Op::Gt => t < value,
        Op::Lt => t > value,
        Op::Eq => true,
    };
    ok.then_some(t)
}

const MAX_RESAMPLES: usize = 64;

fn numeric_constraint<R: Rng>(column: &str, value: f64, rng: &mut R) -> Constraint {
    let op = *[Op::Gt, Op::Lt, Op::Eq].choose(rng).expect("non-empty");
    if op == Op::Eq {
        return Constraint::numeric(column, Op::Eq, value);
    }
    for _ in 0..MAX_RESAMPLES {
        let u = rng.random_range(0.75..=1.25);
        if let Some(t) = perturb_threshold(value, op, u) {
            return Constraint::numeric(column, op, t);
        }
    }
    // Only reachable for values at or next to zero, where scaling cannot
    // move the threshold.
    let step = match op {
        Op::Gt => -1.0,
        _ => 1.0,
    };
    Constraint::numeric(column, op, crate::table::round_to(value + step, CONSTRAINT_PRECISION))
}

/// Samples a query from `seed`'s own values. `None` signals that the seed
/// row lacks enough eligible columns for `(qtype, k)`.
pub fn generate_query(
    qid: String,
    seed: &Document,
    qtype: QueryType,
    k: usize,
    eligible: &EligibleColumns,
    seed_int: u64,
    template: Template,
) -> Option<Query> {
    if k == 0 {
        return None;
    }
    let mut rng = rng_for(seed_int, "query");
    let (num, cat) = eligible.for_doc(seed);
    let (n_num, n_cat) = match qtype {
        QueryType::Categorical => (0, k),
        QueryType::Numeric => (k, 0),
        QueryType::Mixed => {
            if k < 2 {
                return None;
            }
            let lo = k.saturating_sub(cat.len()).max(1);
            let hi = (k - 1).min(num.len());
            if lo > hi {
                return None;
            }
            let n = rng.random_range(lo..=hi);
            (n, k - n)
        }
    };
    if num.len() < n_num || cat.len() < n_cat {
        return None;
    }
    let picked: BTreeSet<&str> = num
        .iter()
        .copied()
        .choose_multiple(&mut rng, n_num)
        .into_iter()
        .chain(cat.iter().copied().choose_multiple(&mut rng, n_cat))
        .collect();
    let mut constraints = Vec::with_capacity(k);
    for cell in seed.cells.iter().filter(|c| picked.contains(c.name.as_str())) {
        let c = match &cell.value {
            CellValue::Number(v) if num.contains(&cell.name.as_str()) => {
                numeric_constraint(&cell.name, *v, &mut rng)
            }
            CellValue::Text(t) => Constraint::eq_text(&cell.name, t),
            _ => return None,
        };
        constraints.push(c);
    }
    Some(Query {
        qid,
        qtype,
        k,
        template,
        text: render_query(&constraints, template),
        constraints,
        seed_doc_id: seed.doc_id.clone(),
    })
}

/// Exhaustive target set; `None` when it is smaller than [`MIN_TARGET_SET`].
pub fn verify_query(query: &Query, corpus: &Corpus) -> Option<BTreeSet<String>> {
    let hits = target_set(&query.constraints, corpus);
    (hits.len() >= MIN_TARGET_SET).then_some(hits)
}

pub fn target_set(constraints: &[Constraint], corpus: &Corpus) -> BTreeSet<String> {
    corpus
        .documents
        .iter()
        .filter(|d| satisfies(d, constraints))
        .map(|d| d.doc_id.clone())
        .collect()
}

/// Label-description query used by the classification task.
pub fn make_class_query(target_column: &str, value: &str) -> Result<String> {
    if value.trim().is_empty() {
        return Err(Error::Argument("class value must be non-empty".into()));
    }
    Ok(format!("This is a record where {target_column} is {value}."))
}

/// The eight `(type, k)` cells; mixed queries need at least two constraints.
pub fn query_cells() -> Vec<(QueryType, usize)> {
    let mut cells = Vec::new();
    for qt in QueryType::ALL {
        for k in 1..=3 {
            if qt == QueryType::Mixed && k == 1 {
                continue;
            }
            cells.push((qt, k));
        }
    }
    cells
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub attempts: usize,
    pub skipped: usize,
    pub duplicates: usize,
    pub rejected: usize,
    pub retained: usize,
    /// Cells that ran out of attempts before reaching their quota.
    pub short_cells: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct QuerySet {
    pub queries: Vec<Query>,
    pub qrels: QrelSet,
    pub stats: GenerationStats,
}

#[derive(Debug, Clone)]
pub struct GenerationConfig {
    pub total: usize,
    pub seed: u64,
    pub qid_prefix: String,
    pub template: Template,
    /// Attempts allowed per requested query in a cell.
    pub attempts_per_query: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            total: 300,
            seed: 42,
            qid_prefix: "q".into(),
            template: Template::T1,
            attempts_per_query: 200,
        }
    }
}

/// Balanced driver: splits `total` evenly over the `(type, k)` cells and
/// keeps drawing seed rows until each cell holds its quota of verified
/// queries. Query text is deduplicated.
pub fn generate_queries(corpus: &Corpus, cfg: &GenerationConfig) -> Result<QuerySet> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let eligible = EligibleColumns::from_corpus(corpus);
    let cells = query_cells();
    let base = cfg.total / cells.len();
    let extra = cfg.total % cells.len();
    let mut out = QuerySet::default();
    let mut seen_text = HashSet::new();
    let mut counter = 0usize;
    for (ci, &(qtype, k)) in cells.iter().enumerate() {
        let quota = base + usize::from(ci < extra);
        let tag = format!("{}/{qtype}/{k}", cfg.qid_prefix);
        let mut rng = rng_for(cfg.seed, &tag);
        let mut got = 0;
        let mut attempts = 0;
        while got < quota && attempts < quota * cfg.attempts_per_query {
            attempts += 1;
            let seed_doc = corpus.documents.choose(&mut rng).expect("non-empty corpus");
            let seed_int = derive_seed(cfg.seed, &format!("{tag}/{attempts}"));
            let qid = format!("{}{:05}", cfg.qid_prefix, counter);
            let Some(q) = generate_query(qid, seed_doc, qtype, k, &eligible, seed_int, cfg.template) else {
                out.stats.skipped += 1;
                continue;
            };
            if !seen_text.insert(q.text.clone()) {
                out.stats.duplicates += 1;
                continue;
            }
            match verify_query(&q, corpus) {
                Some(hits) => {
                    out.qrels.insert(q.qid.clone(), hits);
                    out.queries.push(q);
                    counter += 1;
                    got += 1;
                }
                None => out.stats.rejected += 1,
            }
        }
        out.stats.attempts += attempts;
        if got < quota {
            log::warn!("cell {qtype}/k={k}: {got} of {quota} queries after {attempts} attempts");
            out.stats.short_cells.push(format!("{qtype}/{k}"));
        }
    }
    out.stats.retained = out.queries.len();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{infer_schema, DocCell};

    fn age_salary() -> Vec<Constraint> {
        vec![
            Constraint::numeric("age", Op::Eq, 25.0),
            Constraint::numeric("salary", Op::Gt, 50000.0),
        ]
    }

    #[test]
    fn template_renderings() {
        let c = age_salary();
        let expect = [
            "Find records where age is 25 and salary greater than 50000",
            "SELECT * FROM table WHERE age = 25 AND salary > 50000",
            "Which records have age equal to 25 and salary greater than 50000?",
            "Get all entries with age of 25 and salary above 50000",
            "Filter: age==25, salary>50000",
            "Search for records: age:25 salary:>50000",
            "I need data where the age is 25 and the salary is more than 50000",
            "age == 25 | salary > 50000",
            r#"{"age": 25, "salary": {"$gt": 50000}}"#,
            "Show me rows that have age as 25 and salary over 50000",
            "Conditions: 1. age equals 25; 2. salary > 50000",
            "Look up records matching: age=25, salary>50000",
        ];
        for (t, e) in Template::ALL.iter().zip(expect) {
            assert_eq!(render_query(&c, *t), e, "{t}");
        }
    }

    #[test]
    fn text_values_and_lt_render() {
        let c = vec![
            Constraint::eq_text("Status", "Active"),
            Constraint::numeric("Price", Op::Lt, 50.25),
        ];
        assert_eq!(
            render_query(&c, Template::T1),
            "Find records where Status is Active and Price less than 50.25"
        );
        assert_eq!(
            render_query(&c, Template::T2),
            "SELECT * FROM table WHERE Status = 'Active' AND Price < 50.25"
        );
        assert_eq!(
            render_query(&c, Template::T9),
            r#"{"Status": "Active", "Price": {"$lt": 50.25}}"#
        );
    }

    #[test]
    fn template_parse_round_trip() {
        for t in Template::ALL {
            assert_eq!(t.to_string().parse::<Template>().unwrap(), t);
        }
        assert!("T13".parse::<Template>().is_err());
    }

    fn doc(cells: &[(&str, CellValue)]) -> Document {
        Document {
            doc_id: "d:0".into(),
            dataset_id: "d".into(),
            source_row: 0,
            text: String::new(),
            cells: cells
                .iter()
                .map(|(n, v)| DocCell {
                    name: n.to_string(),
                    value: v.clone(),
                })
                .collect(),
        }
    }

    #[test]
    fn satisfies_examples() {
        let d = doc(&[
            ("Price", CellValue::Number(49.0)),
            ("Status", CellValue::Text("Inactive".into())),
            ("Gone", CellValue::Missing),
        ]);
        assert!(satisfies(&d, &[Constraint::numeric("Price", Op::Lt, 50.25)]));
        assert!(!satisfies(&d, &[Constraint::eq_text("Status", "Active")]));
        assert!(!satisfies(&d, &[Constraint::numeric("Gone", Op::Gt, 10.0)]));
        assert!(!satisfies(&d, &[Constraint::numeric("Absent", Op::Gt, 10.0)]));
        assert!(!satisfies(&d, &[Constraint::numeric("Status", Op::Eq, 1.0)]));
        assert!(satisfies(&d, &[Constraint::numeric("Price", Op::Eq, 49.004)]));
        assert!(satisfies(&d, &[]));
    }

    #[test]
    fn constraint_kind_rules() {
        assert!(Constraint::new("a", Op::Gt, CellValue::Text("x".into())).is_err());
        assert!(Constraint::new("a", Op::Eq, CellValue::Text("x".into())).is_ok());
        assert!(Constraint::new("a", Op::Lt, CellValue::Number(f64::NAN)).is_err());
        assert!(Constraint::new("a", Op::Eq, CellValue::Missing).is_err());
    }

    #[test]
    fn perturbation_example() {
        assert_eq!(perturb_threshold(50.25, Op::Lt, 1.2), Some(60.3));
        assert_eq!(perturb_threshold(50.25, Op::Lt, 0.9), None);
        assert_eq!(perturb_threshold(50.25, Op::Gt, 0.8), Some(40.2));
        assert_eq!(perturb_threshold(-10.0, Op::Gt, 1.1), Some(-11.0));
        assert_eq!(perturb_threshold(0.0, Op::Gt, 0.8), None);
    }

    #[test]
    fn near_zero_seed_still_satisfies() {
        let mut rng = rng_for(1, "z");
        for _ in 0..50 {
            let c = numeric_constraint("x", 0.0, &mut rng);
            assert!(c.holds(&CellValue::Number(0.0)));
        }
    }

    #[test]
    fn class_query() {
        assert_eq!(
            make_class_query("species", "setosa").unwrap(),
            "This is a record where species is setosa."
        );
        assert_eq!(
            make_class_query("price", "between 15.5 and 40.2").unwrap(),
            "This is a record where price is between 15.5 and 40.2."
        );
        assert!(make_class_query("y", "  ").is_err());
    }

    fn shop_corpus(rows: usize) -> Corpus {
        let header: Vec<String> = ["Status", "Price", "Qty"].iter().map(|s| s.to_string()).collect();
        let records: Vec<Vec<String>> = (0..rows)
            .map(|i| {
                vec![
                    ["Active", "Inactive", "Paused"][i % 3].to_string(),
                    format!("{}.25", 10 + (i * 7) % 90),
                    format!("{}", i % 6),
                ]
            })
            .collect();
        let t = infer_schema("shop", &header, &records).unwrap();
        crate::table::build_corpus(&[t], &Default::default()).unwrap()
    }

    #[test]
    fn generated_queries_are_seed_satisfying() {
        let corpus = shop_corpus(60);
        let eligible = EligibleColumns::from_corpus(&corpus);
        for (i, d) in corpus.documents.iter().enumerate() {
            for (qt, k) in query_cells() {
                if let Some(q) = generate_query("q".into(), d, qt, k, &eligible, i as u64, Template::T1) {
                    assert_eq!(q.constraints.len(), k);
                    assert!(satisfies(d, &q.constraints), "{}", q.text);
                    match qt {
                        QueryType::Categorical => assert!(q.constraints.iter().all(|c| !c.is_numeric())),
                        QueryType::Numeric => assert!(q.constraints.iter().all(Constraint::is_numeric)),
                        QueryType::Mixed => {
                            assert!(q.constraints.iter().any(Constraint::is_numeric));
                            assert!(q.constraints.iter().any(|c| !c.is_numeric()));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn categorical_k1_example() {
        let corpus = shop_corpus(10);
        let eligible = EligibleColumns::from_corpus(&corpus);
        let q = generate_query(
            "q".into(),
            &corpus.documents[0],
            QueryType::Categorical,
            1,
            &eligible,
            3,
            Template::T1,
        )
        .unwrap();
        assert_eq!(q.constraints, vec![Constraint::eq_text("Status", "Active")]);
        assert_eq!(q.text, "Find records where Status is Active");
        // Only one categorical column exists, so k = 2 cannot be built.
        assert!(generate_query("q".into(), &corpus.documents[0], QueryType::Categorical, 2, &eligible, 3, Template::T1).is_none());
        assert!(generate_query("q".into(), &corpus.documents[0], QueryType::Mixed, 1, &eligible, 3, Template::T1).is_none());
    }

    #[test]
    fn verification_threshold() {
        let corpus = shop_corpus(15);
        // Status = Active on rows 0,3,6,9,12.
        let mk = |constraints: Vec<Constraint>| Query {
            qid: "q".into(),
            qtype: QueryType::Categorical,
            k: constraints.len(),
            template: Template::T1,
            text: String::new(),
            constraints,
            seed_doc_id: "shop:0".into(),
        };
        let five = verify_query(&mk(vec![Constraint::eq_text("Status", "Active")]), &corpus).unwrap();
        assert_eq!(five.len(), 5);
        assert!(five.contains("shop:0"));
        let small = shop_corpus(12);
        assert!(verify_query(&mk(vec![Constraint::eq_text("Status", "Active")]), &small).is_none());
    }

    #[test]
    fn balanced_driver() {
        let corpus = shop_corpus(300);
        let cfg = GenerationConfig {
            total: 16,
            seed: 5,
            ..Default::default()
        };
        let set = generate_queries(&corpus, &cfg).unwrap();
        let mut per_cell: BTreeMap<(QueryType, usize), usize> = BTreeMap::new();
        for q in &set.queries {
            *per_cell.entry((q.qtype, q.k)).or_default() += 1;
            let hits = set.qrels.get(&q.qid).unwrap();
            assert!(hits.len() >= MIN_TARGET_SET);
            assert!(hits.contains(&q.seed_doc_id));
        }
        // Only one categorical column: categorical k>=2 and mixed k=3 are impossible.
        assert_eq!(per_cell.get(&(QueryType::Categorical, 1)), Some(&2));
        assert_eq!(per_cell.get(&(QueryType::Numeric, 1)), Some(&2));
        assert_eq!(per_cell.get(&(QueryType::Mixed, 2)), Some(&2));
        assert!(set.stats.short_cells.contains(&"categorical/2".to_string()));
        let again = generate_queries(&corpus, &cfg).unwrap();
        assert_eq!(again.queries, set.queries);
    }

    #[test]
    fn constraint_json_shape() {
        let c = Constraint::numeric("Price", Op::Lt, 60.3);
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"column":"Price","op":"lt","value":60.3}"#
        );
        let t: Constraint = serde_json::from_str(r#"{"column":"S","op":"eq","value":"Active"}"#).unwrap();
        assert_eq!(t, Constraint::eq_text("S", "Active"));
    }
}
