//! Observed data: interaction logs loaded from CSV.
//!
//! A log file is UTF-8 CSV with a header row. Four columns are required
//! (user, item, feedback, timestamp), a propensity column is optional and
//! every other column becomes a context key. [`CsvSchema`] maps these roles
//! onto the file's actual column names.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Context, ContextValue};
use crate::ids::{ItemId, UserId};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("missing required column `{column}` (mapped from `{role}`)")]
    MissingColumn { role: &'static str, column: String },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl DataError {
    fn parse(row: usize, message: impl Into<String>) -> Self {
        DataError::Parse {
            row,
            message: message.into(),
        }
    }
}

// ── Schema ──────────────────────────────────────────────────────────────

/// Maps column roles to header names, and optionally declares the feedback
/// range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub user_id: String,
    pub item_id: String,
    pub feedback: String,
    pub timestamp: String,
    #[serde(deserialize_with = "Option::deserialize")]
    pub propensity: Option<String>,
    #[serde(deserialize_with = "Option::deserialize")]
    pub feedback_range: Option<[f64; 2]>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            user_id: "user_id".into(),
            item_id: "item_id".into(),
            feedback: "feedback".into(),
            timestamp: "timestamp".into(),
            propensity: Some("propensity".into()),
            feedback_range: None,
        }
    }
}

impl CsvSchema {
    pub fn with_feedback_range(mut self, min: f64, max: f64) -> Self {
        self.feedback_range = Some([min, max]);
        self
    }

    fn validate(&self) -> Result<(), DataError> {
        if let Some([lo, hi]) = self.feedback_range {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(DataError::InvalidSchema(format!(
                    "feedback range [{lo}, {hi}] must be finite and ordered"
                )));
            }
        }
        Ok(())
    }
}

/// Parses `role=column,...` mappings, e.g.
/// `user_id=uid,item_id=movie,feedback_min=1,feedback_max=5`.
///
/// Unmentioned roles keep their default column names; `propensity=` (empty)
/// disables the propensity column.
impl FromStr for CsvSchema {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut schema = CsvSchema::default();
        let mut range = (None, None);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| DataError::InvalidSchema(format!("expected role=column, got `{part}`")))?;
            let number = || {
                parse_decimal(value)
                    .ok_or_else(|| DataError::InvalidSchema(format!("`{key}` needs a number, got `{value}`")))
            };
            match key {
                "user_id" => schema.user_id = value.into(),
                "item_id" => schema.item_id = value.into(),
                "feedback" => schema.feedback = value.into(),
                "timestamp" => schema.timestamp = value.into(),
                "propensity" => schema.propensity = (!value.is_empty()).then(|| value.into()),
                "feedback_min" => range.0 = Some(number()?),
                "feedback_max" => range.1 = Some(number()?),
                other => return Err(DataError::InvalidSchema(format!("unknown role `{other}`"))),
            }
        }
        match range {
            (Some(lo), Some(hi)) => schema.feedback_range = Some([lo, hi]),
            (None, None) => {}
            _ => {
                return Err(DataError::InvalidSchema(
                    "feedback_min and feedback_max must be given together".into(),
                ))
            }
        }
        schema.validate()?;
        Ok(schema)
    }
}

/// Strict decimal parsing: optional sign, digits with optional fraction,
/// optional exponent. No `inf`/`nan`, no whitespace, no locale forms.
pub fn parse_decimal(s: &str) -> Option<f64> {
    let bytes = s.as_bytes();
    let mut i = 0;
    if matches!(bytes.first(), Some(b'+' | b'-')) {
        i += 1;
    }
    let int_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return None;
    }
    if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
        i += 1;
        if matches!(bytes.get(i), Some(b'+' | b'-')) {
            i += 1;
        }
        let exp_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return None;
        }
    }
    if i != bytes.len() {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

// ── Events and logs ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user: UserId,
    pub item: ItemId,
    pub feedback: f64,
    pub timestamp: i64,
    pub propensity: Option<f64>,
    pub context: Context,
}

/// Events sorted by `(timestamp, input order)`, with their id sets and
/// feedback range.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    events: Vec<InteractionEvent>,
    feedback_range: [f64; 2],
    users: BTreeSet<UserId>,
    items: BTreeSet<ItemId>,
}

impl InteractionLog {
    /// Validates and sorts `events`. A declared range wins over the observed
    /// one; events outside it are rejected. Row numbers in errors are
    /// 1-based positions in `events`.
    pub fn from_events(
        mut events: Vec<InteractionEvent>,
        declared_range: Option<[f64; 2]>,
    ) -> Result<Self, DataError> {
        for (i, e) in events.iter().enumerate() {
            check_event(e, declared_range).map_err(|m| DataError::parse(i + 1, m))?;
        }
        // Stable: equal timestamps keep input order.
        events.sort_by_key(|e| e.timestamp);
        let feedback_range = declared_range.unwrap_or_else(|| observed_range(&events));
        let users = events.iter().map(|e| e.user.clone()).collect();
        let items = events.iter().map(|e| e.item.clone()).collect();
        Ok(Self {
            events,
            feedback_range,
            users,
            items,
        })
    }

    pub fn events(&self) -> &[InteractionEvent] {
        &self.events
    }

    pub fn feedback_range(&self) -> [f64; 2] {
        self.feedback_range
    }

    pub fn users(&self) -> &BTreeSet<UserId> {
        &self.users
    }

    pub fn items(&self) -> &BTreeSet<ItemId> {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Every context key appearing on any event.
    pub fn context_keys(&self) -> BTreeSet<String> {
        self.events
            .iter()
            .flat_map(|e| e.context.keys().cloned())
            .collect()
    }

    pub fn mean_feedback(&self) -> Option<f64> {
        mean(self.events.iter().map(|e| e.feedback))
    }
}

fn check_event(e: &InteractionEvent, declared: Option<[f64; 2]>) -> Result<(), String> {
    if !e.feedback.is_finite() {
        return Err(format!("feedback must be finite, got {}", e.feedback));
    }
    if let Some(p) = e.propensity {
        if !(p > 0.0 && p <= 1.0) {
            return Err(format!("propensity must be in (0, 1], got {p}"));
        }
    }
    if let Some([lo, hi]) = declared {
        if e.feedback < lo || e.feedback > hi {
            return Err(format!(
                "feedback {} outside declared range [{lo}, {hi}]",
                e.feedback
            ));
        }
    }
    Ok(())
}

fn observed_range(events: &[InteractionEvent]) -> [f64; 2] {
    events.iter().fold(None, |acc: Option<[f64; 2]>, e| {
        Some(match acc {
            None => [e.feedback, e.feedback],
            Some([lo, hi]) => [lo.min(e.feedback), hi.max(e.feedback)],
        })
    })
    .unwrap_or([0.0, 0.0])
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

// ── Loading and saving ──────────────────────────────────────────────────

pub fn load_interaction_log(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<InteractionLog, DataError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_interaction_log(&bytes, schema)
}

pub fn parse_interaction_log(bytes: &[u8], schema: &CsvSchema) -> Result<InteractionLog, DataError> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    let position = |role: &'static str, column: &str| {
        headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| DataError::MissingColumn {
                role,
                column: column.to_string(),
            })
    };
    let user_col = position("user_id", &schema.user_id)?;
    let item_col = position("item_id", &schema.item_id)?;
    let feedback_col = position("feedback", &schema.feedback)?;
    let timestamp_col = position("timestamp", &schema.timestamp)?;
    let propensity_col = schema
        .propensity
        .as_deref()
        .and_then(|c| headers.iter().position(|h| h == c));
    let reserved: HashSet<usize> = [Some(user_col), Some(item_col), Some(feedback_col), Some(timestamp_col), propensity_col]
        .into_iter()
        .flatten()
        .collect();
    let context_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !reserved.contains(i))
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut events = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| DataError::parse(row, e.to_string()))?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let user = UserId::new(field(user_col)).map_err(|e| DataError::parse(row, e.to_string()))?;
        let item = ItemId::new(field(item_col)).map_err(|e| DataError::parse(row, e.to_string()))?;
        let feedback = parse_decimal(field(feedback_col))
            .ok_or_else(|| DataError::parse(row, format!("feedback `{}` is not a decimal number", field(feedback_col))))?;
        let timestamp = field(timestamp_col)
            .parse::<i64>()
            .map_err(|_| DataError::parse(row, format!("timestamp `{}` is not an integer", field(timestamp_col))))?;
        let propensity = match propensity_col.map(field) {
            None | Some("") => None,
            Some(raw) => Some(
                parse_decimal(raw)
                    .ok_or_else(|| DataError::parse(row, format!("propensity `{raw}` is not a decimal number")))?,
            ),
        };
        let context = context_cols
            .iter()
            .filter(|(col, _)| !field(*col).is_empty())
            .map(|(col, name)| {
                let raw = field(*col);
                let value = match parse_decimal(raw) {
                    Some(v) => ContextValue::Number(v),
                    None => ContextValue::Text(raw.to_string()),
                };
                (name.clone(), value)
            })
            .collect();
        let event = InteractionEvent {
            user,
            item,
            feedback,
            timestamp,
            propensity,
            context,
        };
        check_event(&event, schema.feedback_range).map_err(|m| DataError::parse(row, m))?;
        events.push(event);
    }
    InteractionLog::from_events(events, schema.feedback_range)
}

/// Writes `log` in the layout `parse_interaction_log` reads with `schema`.
pub fn write_interaction_log<W: std::io::Write>(
    log: &InteractionLog,
    schema: &CsvSchema,
    out: W,
) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_writer(out);
    let with_propensity = schema.propensity.is_some() && log.events.iter().any(|e| e.propensity.is_some());
    let context_keys: Vec<String> = log.context_keys().into_iter().collect();
    let mut header = vec![
        schema.user_id.clone(),
        schema.item_id.clone(),
        schema.feedback.clone(),
        schema.timestamp.clone(),
    ];
    if with_propensity {
        header.push(schema.propensity.clone().unwrap_or_default());
    }
    header.extend(context_keys.iter().cloned());
    writer.write_record(&header)?;
    for e in &log.events {
        let mut row = vec![
            e.user.to_string(),
            e.item.to_string(),
            format_real(e.feedback),
            e.timestamp.to_string(),
        ];
        if with_propensity {
            row.push(e.propensity.map(format_real).unwrap_or_default());
        }
        for key in &context_keys {
            row.push(match e.context.get(key) {
                None => String::new(),
                Some(ContextValue::Number(v)) => format_real(*v),
                Some(ContextValue::Text(t)) => t.clone(),
            });
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn save_interaction_log(log: &InteractionLog, schema: &CsvSchema, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_interaction_log(log, schema, std::io::BufWriter::new(file))
}

/// Shortest decimal that round-trips to the same `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:?}")
}

// ── Validation ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub event_count: usize,
    /// Events repeating an earlier `(user, item, timestamp)` triple.
    pub duplicate_count: usize,
    pub missing_propensity_count: usize,
    pub out_of_range_count: usize,
    pub user_count: usize,
    pub item_count: usize,
    /// Distinct `(user, item)` pairs over `user_count * item_count`.
    pub density: f64,
}

pub fn validate(log: &InteractionLog) -> ValidationReport {
    let events = log.events();
    let triples: HashSet<(&UserId, &ItemId, i64)> =
        events.iter().map(|e| (&e.user, &e.item, e.timestamp)).collect();
    let pairs: HashSet<(&UserId, &ItemId)> = events.iter().map(|e| (&e.user, &e.item)).collect();
    let [lo, hi] = log.feedback_range();
    let cells = log.users().len() * log.items().len();
    ValidationReport {
        event_count: events.len(),
        duplicate_count: events.len() - triples.len(),
        missing_propensity_count: events.iter().filter(|e| e.propensity.is_none()).count(),
        out_of_range_count: events.iter().filter(|e| e.feedback < lo || e.feedback > hi).count(),
        user_count: log.users().len(),
        item_count: log.items().len(),
        density: if cells == 0 { 0.0 } else { pairs.len() as f64 / cells as f64 },
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, String); 7] = [
            ("events", self.event_count.to_string()),
            ("duplicates", self.duplicate_count.to_string()),
            ("missing_propensity", self.missing_propensity_count.to_string()),
            ("out_of_range", self.out_of_range_count.to_string()),
            ("users", self.user_count.to_string()),
            ("items", self.item_count.to_string()),
            ("density", format!("{:.4}", self.density)),
        ];
        for (name, value) in rows {
            writeln!(f, "{name:<20}{value:>12}")?;
        }
        Ok(())
    }
}

// ── User-item matrix ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Value of the latest event (timestamp, then input order).
    Last,
    Mean,
}

impl FromStr for Aggregation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "last" => Ok(Aggregation::Last),
            "mean" => Ok(Aggregation::Mean),
            other => Err(format!("unknown aggregation `{other}` (expected last|mean)")),
        }
    }
}

/// Sparse user-item matrix. Cells without any event are missing, not zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    users: Vec<UserId>,
    items: Vec<ItemId>,
    cells: BTreeMap<(usize, usize), f64>,
}

impl RatingMatrix {
    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn get(&self, user: &str, item: &str) -> Option<f64> {
        let u = self.users.binary_search_by(|x| x.as_str().cmp(user)).ok()?;
        let i = self.items.binary_search_by(|x| x.as_str().cmp(item)).ok()?;
        self.cells.get(&(u, i)).copied()
    }

    pub fn is_missing(&self, user: &str, item: &str) -> bool {
        self.get(user, item).is_none()
    }

    pub fn observed_count(&self) -> usize {
        self.cells.len()
    }

    /// Present cells as `(user, item, value)` in row-major id order.
    pub fn observed(&self) -> impl Iterator<Item = (&UserId, &ItemId, f64)> {
        self.cells
            .iter()
            .map(|(&(u, i), &v)| (&self.users[u], &self.items[i], v))
    }
}

pub fn to_matrix(log: &InteractionLog, aggregation: Aggregation) -> RatingMatrix {
    let users: Vec<UserId> = log.users().iter().cloned().collect();
    let items: Vec<ItemId> = log.items().iter().cloned().collect();
    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for e in log.events() {
        let u = users.binary_search(&e.user).expect("user indexed");
        let i = items.binary_search(&e.item).expect("item indexed");
        let cell = acc.entry((u, i)).or_insert((0.0, 0));
        match aggregation {
            Aggregation::Last => *cell = (e.feedback, 1),
            Aggregation::Mean => *cell = (cell.0 + e.feedback, cell.1 + 1),
        }
    }
    let cells = acc
        .into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect();
    RatingMatrix { users, items, cells }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(csv: &str) -> Result<InteractionLog, DataError> {
        parse_interaction_log(csv.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn events_are_sorted_by_timestamp() {
        let log = parse("user_id,item_id,feedback,timestamp\na,x,1,30\nb,y,2,10\nc,z,3,20\n").unwrap();
        let ts: Vec<i64> = log.events().iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![10, 20, 30]);
    }

    #[test]
    fn equal_timestamps_keep_input_order() {
        let log = parse("user_id,item_id,feedback,timestamp\nb,x,1,5\na,x,2,5\n").unwrap();
        assert_eq!(log.events()[0].user.as_str(), "b");
    }

    #[test]
    fn zero_propensity_names_the_row() {
        let err = parse("user_id,item_id,feedback,timestamp,propensity\na,x,1,1,0.5\na,y,1,2,0.0\n").unwrap_err();
        match err {
            DataError::Parse { row, message } => {
                assert_eq!(row, 2);
                assert!(message.contains("propensity"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_reported() {
        let err = parse("user_id,item_id,timestamp\na,x,1\n").unwrap_err();
        assert!(matches!(err, DataError::MissingColumn { role: "feedback", .. }));
    }

    #[test]
    fn locale_and_special_numbers_are_rejected() {
        assert!(parse("user_id,item_id,feedback,timestamp\na,x,\"3,5\",1\n").is_err());
        assert!(parse("user_id,item_id,feedback,timestamp\na,x,NaN,1\n").is_err());
        assert!(parse("user_id,item_id,feedback,timestamp\na,x,1,1.5\n").is_err());
        assert_eq!(parse_decimal("-1.5e3"), Some(-1500.0));
        assert_eq!(parse_decimal(".5"), Some(0.5));
        assert_eq!(parse_decimal("inf"), None);
        assert_eq!(parse_decimal(" 1"), None);
    }

    #[test]
    fn declared_range_wins_and_rejects_outliers() {
        let schema = CsvSchema::default().with_feedback_range(1.0, 5.0);
        let log = parse_interaction_log(b"user_id,item_id,feedback,timestamp\na,x,3,1\n", &schema).unwrap();
        assert_eq!(log.feedback_range(), [1.0, 5.0]);
        let err = parse_interaction_log(b"user_id,item_id,feedback,timestamp\na,x,6,1\n", &schema).unwrap_err();
        assert!(matches!(err, DataError::Parse { row: 1, .. }));
    }

    #[test]
    fn observed_range_is_default() {
        let log = parse("user_id,item_id,feedback,timestamp\na,x,2,1\na,y,4.5,2\n").unwrap();
        assert_eq!(log.feedback_range(), [2.0, 4.5]);
    }

    #[test]
    fn extra_columns_become_context() {
        let log = parse("user_id,item_id,feedback,timestamp,hour,city\na,x,2,1,13,galway\na,y,4,2,,\n").unwrap();
        let ctx = &log.events()[0].context;
        assert_eq!(ctx.get("hour"), Some(&ContextValue::Number(13.0)));
        assert_eq!(ctx.get("city"), Some(&ContextValue::Text("galway".into())));
        assert!(log.events()[1].context.is_empty());
        assert_eq!(log.context_keys(), BTreeSet::from(["city".to_string(), "hour".to_string()]));
    }

    #[test]
    fn schema_mapping_parses() {
        let s: CsvSchema = "user_id=uid,item_id=movie,feedback=rating,timestamp=ts,propensity=,feedback_min=1,feedback_max=5"
            .parse()
            .unwrap();
        assert_eq!(s.user_id, "uid");
        assert_eq!(s.propensity, None);
        assert_eq!(s.feedback_range, Some([1.0, 5.0]));
        assert!("feedback_min=1".parse::<CsvSchema>().is_err());
        assert!("bogus=1".parse::<CsvSchema>().is_err());
    }

    #[test]
    fn density_of_two_by_two() {
        let log = parse("user_id,item_id,feedback,timestamp\na,x,1,1\nb,y,1,2\n").unwrap();
        assert_eq!(validate(&log).density, 0.5);
    }

    #[test]
    fn validation_counts() {
        let log = parse("user_id,item_id,feedback,timestamp\na,x,1,1\na,x,1,1\nb,y,1,2\n").unwrap();
        let r = validate(&log);
        assert_eq!(r.duplicate_count, 1);
        assert_eq!(r.missing_propensity_count, 3);
        assert_eq!(r.out_of_range_count, 0);

        let mut csv = String::from("user_id,item_id,feedback,timestamp\n");
        for k in 0..10 {
            csv.push_str(&format!("u{},i{},1,{k}\n", k % 5, k));
        }
        let r = validate(&parse(&csv).unwrap());
        assert_eq!((r.user_count, r.item_count), (5, 10));
        assert_eq!(r.density, 0.2);
        assert!(r.to_string().contains("0.2000"));
    }

    #[test]
    fn matrix_aggregation_and_missing_cells() {
        let log = parse("user_id,item_id,feedback,timestamp\nu,i,3,1\nu,i,5,2\nv,j,2,3\n").unwrap();
        let last = to_matrix(&log, Aggregation::Last);
        assert_eq!(last.get("u", "i"), Some(5.0));
        assert_eq!(to_matrix(&log, Aggregation::Mean).get("u", "i"), Some(4.0));
        assert_eq!(last.get("u", "j"), None);
        assert!(last.is_missing("v", "i"));
        assert_eq!(last.get("v", "j"), Some(2.0));
        assert_eq!(last.observed_count(), 2);
    }

    #[test]
    fn empty_ids_are_parse_errors() {
        assert!(matches!(
            parse("user_id,item_id,feedback,timestamp\n,x,1,1\n"),
            Err(DataError::Parse { row: 1, .. })
        ));
    }
}
