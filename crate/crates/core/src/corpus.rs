//! Data model and JSONL ingestion for multi-agent caption streams and QA sets.
//!
//! Captions arrive as one JSON object per line. Every record is validated
//! against the agent roster and the interval invariants before it is
//! returned, and errors carry the 1-based line number of the offending line.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid roster: {0}")]
    Roster(String),
    #[error("invalid timestamp {0:?}")]
    Timestamp(String),
    #[error("invalid interval: {0}")]
    Interval(String),
    #[error("bucket width {0} does not divide 60")]
    BucketWidth(u32),
}

impl CorpusError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        CorpusError::Line {
            line,
            message: message.into(),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Agent identifier such as `A1_JAKE`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(value: impl Into<String>) -> Result<Self, CorpusError> {
        let value = value.into();
        if value.trim().is_empty() {
            return Err(CorpusError::Roster("empty agent id".into()));
        }
        Ok(AgentId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub id: AgentId,
    pub name: String,
}

/// Ordered list of agents with their display names.
///
/// Roster order is significant: it is the order agents appear in `who`
/// lists and the order used by the agent-count ablation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    pub agents: Vec<AgentInfo>,
}

impl Roster {
    pub fn new(agents: Vec<AgentInfo>) -> Result<Self, CorpusError> {
        let mut seen = std::collections::HashSet::new();
        for a in &agents {
            if a.id.as_str().trim().is_empty() {
                return Err(CorpusError::Roster("empty agent id".into()));
            }
            if a.name.trim().is_empty() {
                return Err(CorpusError::Roster(format!("agent {} has no name", a.id)));
            }
            if !seen.insert(a.id.clone()) {
                return Err(CorpusError::Roster(format!("duplicate agent id {}", a.id)));
            }
        }
        Ok(Roster { agents })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let raw = read_file(path)?;
        let parsed: Roster = serde_json::from_str(&raw).map_err(|e| CorpusError::Roster(e.to_string()))?;
        Roster::new(parsed.agents)
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn contains(&self, id: &AgentId) -> bool {
        self.agents.iter().any(|a| &a.id == id)
    }

    pub fn position(&self, id: &AgentId) -> Option<usize> {
        self.agents.iter().position(|a| &a.id == id)
    }

    pub fn name_of(&self, id: &AgentId) -> Option<&str> {
        self.agents.iter().find(|a| &a.id == id).map(|a| a.name.as_str())
    }

    /// Case-insensitive lookup by display name.
    pub fn by_name(&self, name: &str) -> Option<&AgentInfo> {
        self.agents.iter().find(|a| a.name.eq_ignore_ascii_case(name.trim()))
    }

    /// Resolves either an id or a display name.
    pub fn resolve(&self, key: &str) -> Option<&AgentInfo> {
        self.agents
            .iter()
            .find(|a| a.id.as_str() == key)
            .or_else(|| self.by_name(key))
    }

    /// First `m` agents in roster order.
    pub fn truncated(&self, m: usize) -> Roster {
        Roster {
            agents: self.agents.iter().take(m).cloned().collect(),
        }
    }
}

/// A point in the corpus timeline: day number plus packed `HHMMSSFF`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Timestamp {
    day: u32,
    time_of_day: u32,
}

impl Timestamp {
    pub fn new(day: u32, time_of_day: u32) -> Result<Self, CorpusError> {
        let hh = time_of_day / 1_000_000;
        let mm = time_of_day / 10_000 % 100;
        let ss = time_of_day / 100 % 100;
        let ff = time_of_day % 100;
        if day < 1 || hh > 23 || mm > 59 || ss > 59 || ff > 99 {
            return Err(CorpusError::Timestamp(format!("DAY{day}_{time_of_day:08}")));
        }
        Ok(Timestamp { day, time_of_day })
    }

    pub fn from_hms(day: u32, hours: u32, minutes: u32, seconds: u32) -> Result<Self, CorpusError> {
        Self::new(day, hours * 1_000_000 + minutes * 10_000 + seconds * 100)
    }

    /// Parses the packed `HHMMSSFF` clock string for a given day.
    pub fn parse_clock(day: u32, clock: &str) -> Result<Self, CorpusError> {
        if clock.len() != 8 || !clock.bytes().all(|b| b.is_ascii_digit()) {
            return Err(CorpusError::Timestamp(clock.to_string()));
        }
        let packed: u32 = clock.parse().map_err(|_| CorpusError::Timestamp(clock.to_string()))?;
        Self::new(day, packed)
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn time_of_day(&self) -> u32 {
        self.time_of_day
    }

    pub fn hours(&self) -> u32 {
        self.time_of_day / 1_000_000
    }

    pub fn minutes(&self) -> u32 {
        self.time_of_day / 10_000 % 100
    }

    pub fn seconds(&self) -> u32 {
        self.time_of_day / 100 % 100
    }

    pub fn frames(&self) -> u32 {
        self.time_of_day % 100
    }

    /// Minutes since midnight.
    pub fn minute_of_day(&self) -> u32 {
        self.hours() * 60 + self.minutes()
    }

    /// Seconds since midnight, with the centiframe as a fraction.
    pub fn seconds_of_day(&self) -> f64 {
        f64::from(self.minute_of_day() * 60 + self.seconds()) + f64::from(self.frames()) / 100.0
    }

    pub fn clock(&self) -> String {
        format!("{:08}", self.time_of_day)
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.day, self.time_of_day).cmp(&(other.day, other.time_of_day))
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DAY{}_{:08}", self.day, self.time_of_day)
    }
}

impl FromStr for Timestamp {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::Timestamp(s.to_string());
        let rest = s.strip_prefix("DAY").ok_or_else(bad)?;
        let (day, clock) = rest.split_once('_').ok_or_else(bad)?;
        let day: u32 = day.parse().map_err(|_| bad())?;
        Timestamp::parse_clock(day, clock)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeInterval {
    start: Timestamp,
    end: Timestamp,
}

impl TimeInterval {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self, CorpusError> {
        if start.day != end.day {
            return Err(CorpusError::Interval(format!(
                "interval {start}-{end} crosses a day boundary"
            )));
        }
        if start >= end {
            return Err(CorpusError::Interval(format!("inverted interval {start}-{end}")));
        }
        Ok(TimeInterval { start, end })
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn end(&self) -> Timestamp {
        self.end
    }

    pub fn day(&self) -> u32 {
        self.start.day
    }

    pub fn duration_seconds(&self) -> f64 {
        self.end.seconds_of_day() - self.start.seconds_of_day()
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

/// Wire shape shared by captions and QA evidence intervals.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawInterval {
    day: u32,
    start: String,
    end: String,
}

impl RawInterval {
    fn to_interval(&self) -> Result<TimeInterval, CorpusError> {
        let start = Timestamp::parse_clock(self.day, &self.start)?;
        let end = Timestamp::parse_clock(self.day, &self.end)?;
        TimeInterval::new(start, end)
    }

    fn from_interval(iv: &TimeInterval) -> Self {
        RawInterval {
            day: iv.day(),
            start: iv.start().clock(),
            end: iv.end().clock(),
        }
    }
}

impl Serialize for TimeInterval {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawInterval::from_interval(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TimeInterval {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        RawInterval::deserialize(deserializer)?
            .to_interval()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaptionKind {
    #[serde(rename = "caption")]
    VisualCaption,
    #[serde(rename = "transcript")]
    Transcript,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRecord {
    pub agent: AgentId,
    pub interval: TimeInterval,
    pub kind: CaptionKind,
    pub text: String,
}

#[derive(Serialize, Deserialize)]
struct RawCaption {
    agent: String,
    day: u32,
    start: String,
    end: String,
    kind: CaptionKind,
    text: String,
}

impl CaptionRecord {
    pub fn new(
        roster: &Roster,
        agent: AgentId,
        interval: TimeInterval,
        kind: CaptionKind,
        text: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let text = text.into();
        if !roster.contains(&agent) {
            return Err(CorpusError::Roster(format!("unknown agent {agent}")));
        }
        if text.trim().is_empty() {
            return Err(CorpusError::Roster("empty caption text".into()));
        }
        Ok(CaptionRecord {
            agent,
            interval,
            kind,
            text,
        })
    }

    /// One JSONL line in the `captions.jsonl` wire format.
    pub fn to_json_line(&self) -> String {
        let raw = RawCaption {
            agent: self.agent.to_string(),
            day: self.interval.day(),
            start: self.interval.start().clock(),
            end: self.interval.end().clock(),
            kind: self.kind,
            text: self.text.clone(),
        };
        serde_json::to_string(&raw).expect("caption serializes")
    }
}

fn sort_captions(records: &mut [CaptionRecord]) {
    records.sort_by(|a, b| {
        (&a.agent, a.interval.start(), a.interval.end()).cmp(&(&b.agent, b.interval.start(), b.interval.end()))
    });
}

/// Parses `captions.jsonl` content, validating every line against `roster`.
pub fn parse_captions(content: &str, roster: &Roster) -> Result<Vec<CaptionRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCaption =
            serde_json::from_str(line).map_err(|e| CorpusError::at(lineno, format!("malformed record: {e}")))?;
        let agent = AgentId::new(raw.agent).map_err(|e| CorpusError::at(lineno, e.to_string()))?;
        if !roster.contains(&agent) {
            return Err(CorpusError::at(lineno, format!("unknown agent {agent}")));
        }
        let start = Timestamp::parse_clock(raw.day, &raw.start).map_err(|e| CorpusError::at(lineno, e.to_string()))?;
        let end = Timestamp::parse_clock(raw.day, &raw.end).map_err(|e| CorpusError::at(lineno, e.to_string()))?;
        if start >= end {
            return Err(CorpusError::at(lineno, format!("inverted interval {start}-{end}")));
        }
        let interval = TimeInterval::new(start, end).map_err(|e| CorpusError::at(lineno, e.to_string()))?;
        if raw.text.trim().is_empty() {
            return Err(CorpusError::at(lineno, "empty caption text"));
        }
        out.push(CaptionRecord {
            agent,
            interval,
            kind: raw.kind,
            text: raw.text,
        });
    }
    sort_captions(&mut out);
    Ok(out)
}

pub fn load_captions(path: &Path, roster: &Roster) -> Result<Vec<CaptionRecord>, CorpusError> {
    parse_captions(&read_file(path)?, roster)
}

pub fn write_captions(path: &Path, records: &[CaptionRecord]) -> Result<(), CorpusError> {
    let mut body = String::new();
    for r in records {
        body.push_str(&r.to_json_line());
        body.push('\n');
    }
    fs::write(path, body).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    SI,
    TC,
    ToM,
    TR,
    EI,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::SI, Category::TC, Category::ToM, Category::TR, Category::EI];
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SI" => Ok(Category::SI),
            "TC" => Ok(Category::TC),
            "ToM" => Ok(Category::ToM),
            "TR" => Ok(Category::TR),
            "EI" => Ok(Category::EI),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::SI => "SI",
            Category::TC => "TC",
            Category::ToM => "ToM",
            Category::TR => "TR",
            Category::EI => "EI",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subtype {
    SingleSpan,
    MultiSpan,
    Concurrency,
    Comparison,
}

impl FromStr for Subtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        match norm.as_str() {
            "singlespan" => Ok(Subtype::SingleSpan),
            "multispan" => Ok(Subtype::MultiSpan),
            "concurrency" => Ok(Subtype::Concurrency),
            "comparison" => Ok(Subtype::Comparison),
            _ => Err(format!("unknown subtype {s:?}")),
        }
    }
}

pub const NUM_OPTIONS: usize = 5;
const LETTERS: [char; NUM_OPTIONS] = ['A', 'B', 'C', 'D', 'E'];

pub fn option_letter(index: usize) -> char {
    LETTERS[index]
}

/// A five-option multiple-choice question.
#[derive(Debug, Clone, PartialEq)]
pub struct QaItem {
    pub id: String,
    pub category: Category,
    pub subtype: Option<Subtype>,
    pub question: String,
    pub options: [String; NUM_OPTIONS],
    pub answer_index: usize,
    pub referenced_agents: Vec<AgentId>,
    pub referenced_intervals: Vec<TimeInterval>,
    pub gold_context: Option<String>,
    /// Fields not understood by this crate, kept verbatim.
    pub extra: BTreeMap<String, Value>,
}

impl QaItem {
    pub fn correct_option(&self) -> &str {
        &self.options[self.answer_index]
    }
}

#[derive(Serialize, Deserialize)]
struct RawQa {
    id: String,
    category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subtype: Option<String>,
    question: String,
    options: Vec<String>,
    answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    referenced_agents: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    referenced_intervals: Vec<RawInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_context: Option<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

fn parse_qa_value(raw: RawQa, roster: Option<&Roster>) -> Result<QaItem, String> {
    let category: Category = raw.category.parse()?;
    let subtype = raw.subtype.as_deref().map(str::parse).transpose()?;
    let options: [String; NUM_OPTIONS] = raw
        .options
        .try_into()
        .map_err(|v: Vec<String>| format!("expected 5 options, got {}", v.len()))?;
    let answer_index = match raw.answer.trim() {
        "A" => 0,
        "B" => 1,
        "C" => 2,
        "D" => 3,
        "E" => 4,
        other => return Err(format!("unknown answer letter {other:?}")),
    };
    let mut referenced_agents = Vec::new();
    for a in raw.referenced_agents {
        let id = match roster {
            Some(r) => r
                .resolve(&a)
                .map(|info| info.id.clone())
                .ok_or_else(|| format!("unknown referenced agent {a:?}"))?,
            None => AgentId::new(a).map_err(|e| e.to_string())?,
        };
        referenced_agents.push(id);
    }
    let referenced_intervals = raw
        .referenced_intervals
        .iter()
        .map(RawInterval::to_interval)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(QaItem {
        id: raw.id,
        category,
        subtype,
        question: raw.question,
        options,
        answer_index,
        referenced_agents,
        referenced_intervals,
        gold_context: raw.gold_context,
        extra: raw.extra,
    })
}

/// Parses `qa.jsonl` content. When a roster is given, referenced agents
/// (ids or display names) must belong to it.
pub fn parse_qa(content: &str, roster: Option<&Roster>) -> Result<Vec<QaItem>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQa =
            serde_json::from_str(line).map_err(|e| CorpusError::at(lineno, format!("malformed record: {e}")))?;
        out.push(parse_qa_value(raw, roster).map_err(|m| CorpusError::at(lineno, m))?);
    }
    Ok(out)
}

pub fn load_qa(path: &Path, roster: Option<&Roster>) -> Result<Vec<QaItem>, CorpusError> {
    parse_qa(&read_file(path)?, roster)
}

pub fn qa_to_json_line(item: &QaItem) -> String {
    let raw = RawQa {
        id: item.id.clone(),
        category: item.category.to_string(),
        subtype: item.subtype.map(|s| format!("{s:?}")),
        question: item.question.clone(),
        options: item.options.to_vec(),
        answer: option_letter(item.answer_index).to_string(),
        referenced_agents: item.referenced_agents.iter().map(|a| a.to_string()).collect(),
        referenced_intervals: item
            .referenced_intervals
            .iter()
            .map(RawInterval::from_interval)
            .collect(),
        gold_context: item.gold_context.clone(),
        extra: item.extra.clone(),
    };
    serde_json::to_string(&raw).expect("qa item serializes")
}

pub fn write_qa(path: &Path, items: &[QaItem]) -> Result<(), CorpusError> {
    let mut body = String::new();
    for item in items {
        body.push_str(&qa_to_json_line(item));
        body.push('\n');
    }
    fs::write(path, body).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub num_agents: usize,
    pub hours_per_agent: f64,
    pub total_hours: f64,
}

impl CorpusStats {
    /// `hours_per_agent` is the mean caption-covered duration per roster agent.
    pub fn compute(records: &[CaptionRecord], roster: &Roster) -> Self {
        let mut per_agent: HashMap<&AgentId, f64> = HashMap::new();
        for r in records {
            *per_agent.entry(&r.agent).or_default() += r.interval.duration_seconds() / 3600.0;
        }
        let num_agents = roster.len();
        let hours_per_agent = if num_agents == 0 {
            0.0
        } else {
            roster
                .agents
                .iter()
                .map(|a| per_agent.get(&a.id).copied().unwrap_or(0.0))
                .sum::<f64>()
                / num_agents as f64
        };
        CorpusStats {
            num_agents,
            hours_per_agent,
            total_hours: num_agents as f64 * hours_per_agent,
        }
    }
}

/// Aligned bucket key: the bucket's start timestamp.
pub type BucketKey = Timestamp;

/// Captions of one bucket, grouped per agent in start order.
pub type Buckets = BTreeMap<BucketKey, BTreeMap<AgentId, Vec<CaptionRecord>>>;

/// Floor-aligns `ts` to a `width_minutes` boundary within its day.
pub fn bucket_start(ts: Timestamp, width_minutes: u32) -> Timestamp {
    let minute = ts.minute_of_day() / width_minutes * width_minutes;
    Timestamp::from_hms(ts.day(), minute / 60, minute % 60, 0).expect("aligned timestamp is valid")
}

/// The full interval of the bucket starting at `start`. The last bucket of
/// a day ends at the final representable instant rather than midnight.
pub fn bucket_interval(start: Timestamp, width_minutes: u32) -> TimeInterval {
    let end_minute = start.minute_of_day() + width_minutes;
    let end = if end_minute >= 24 * 60 {
        Timestamp::new(start.day(), 23_59_59_99).expect("valid end of day")
    } else {
        Timestamp::from_hms(start.day(), end_minute / 60, end_minute % 60, 0).expect("valid")
    };
    TimeInterval::new(start, end).expect("bucket interval is well formed")
}

/// Assigns each record to the bucket containing its interval start.
pub fn bucket_by_interval(records: &[CaptionRecord], width_minutes: u32) -> Result<Buckets, CorpusError> {
    if width_minutes == 0 || 60 % width_minutes != 0 {
        return Err(CorpusError::BucketWidth(width_minutes));
    }
    let mut buckets = Buckets::new();
    for r in records {
        let key = bucket_start(r.interval.start(), width_minutes);
        buckets
            .entry(key)
            .or_default()
            .entry(r.agent.clone())
            .or_default()
            .push(r.clone());
    }
    for per_agent in buckets.values_mut() {
        for recs in per_agent.values_mut() {
            recs.sort_by_key(|r| (r.interval.start(), r.interval.end()));
        }
    }
    Ok(buckets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roster() -> Roster {
        Roster::new(vec![
            AgentInfo {
                id: AgentId::new("A1_JAKE").unwrap(),
                name: "Jake".into(),
            },
            AgentInfo {
                id: AgentId::new("A2_ALICE").unwrap(),
                name: "Alice".into(),
            },
        ])
        .unwrap()
    }

    #[test]
    fn parses_single_caption_line() {
        let line = r#"{"agent":"A1_JAKE","day":3,"start":"12400000","end":"12450000","kind":"caption","text":"Jake pours coffee"}"#;
        let recs = parse_captions(line, &roster()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].interval.to_string(), "DAY3_12400000-DAY3_12450000");
        assert_eq!(recs[0].kind, CaptionKind::VisualCaption);
        assert_eq!(recs[0].text, "Jake pours coffee");
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse_captions("", &roster()).unwrap().is_empty());
    }

    #[test]
    fn inverted_interval_reports_line() {
        let content = concat!(
            r#"{"agent":"A1_JAKE","day":3,"start":"12400000","end":"12450000","kind":"caption","text":"ok"}"#,
            "\n",
            r#"{"agent":"A1_JAKE","day":3,"start":"12450000","end":"12400000","kind":"caption","text":"bad"}"#
        );
        let err = parse_captions(content, &roster()).unwrap_err();
        match err {
            CorpusError::Line { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("inverted interval"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_agent_and_malformed_lines_fail() {
        let unknown =
            r#"{"agent":"A9_BOB","day":1,"start":"10000000","end":"10010000","kind":"transcript","text":"hi"}"#;
        assert!(matches!(
            parse_captions(unknown, &roster()),
            Err(CorpusError::Line { line: 1, .. })
        ));
        assert!(matches!(
            parse_captions("{not json", &roster()),
            Err(CorpusError::Line { line: 1, .. })
        ));
        let bad_clock =
            r#"{"agent":"A1_JAKE","day":1,"start":"25000000","end":"25010000","kind":"caption","text":"x"}"#;
        assert!(parse_captions(bad_clock, &roster()).is_err());
    }

    #[test]
    fn captions_sorted_by_agent_then_start() {
        let content = [
            r#"{"agent":"A2_ALICE","day":1,"start":"10000000","end":"10010000","kind":"caption","text":"a"}"#,
            r#"{"agent":"A1_JAKE","day":1,"start":"10050000","end":"10060000","kind":"caption","text":"b"}"#,
            r#"{"agent":"A1_JAKE","day":1,"start":"10000000","end":"10010000","kind":"caption","text":"c"}"#,
        ]
        .join("\n");
        let recs = parse_captions(&content, &roster()).unwrap();
        let texts: Vec<_> = recs.iter().map(|r| r.text.as_str()).collect();
        assert_eq!(texts, ["c", "b", "a"]);
    }

    #[test]
    fn timestamp_canonical_form_round_trips() {
        let ts = Timestamp::parse_clock(3, "12400000").unwrap();
        assert_eq!(ts.to_string(), "DAY3_12400000");
        assert_eq!("DAY3_12400000".parse::<Timestamp>().unwrap(), ts);
        assert!("DAY0_12400000".parse::<Timestamp>().is_err());
        assert!("DAY3_1240000".parse::<Timestamp>().is_err());
        assert!(Timestamp::new(1, 12_60_00_00).is_err());
    }

    #[test]
    fn interval_must_stay_within_day() {
        let a = Timestamp::parse_clock(1, "23000000").unwrap();
        let b = Timestamp::parse_clock(2, "01000000").unwrap();
        assert!(TimeInterval::new(a, b).is_err());
        assert!(TimeInterval::new(a, a).is_err());
    }

    fn qa_line(extra: &str) -> String {
        format!(
            r#"{{"id":"q1","category":"ToM","question":"Why?","options":["a","b","c","d","e"],"answer":"B"{extra}}}"#
        )
    }

    #[test]
    fn qa_letter_and_category_mapping() {
        let items = parse_qa(&qa_line(""), None).unwrap();
        assert_eq!(items[0].answer_index, 1);
        assert_eq!(items[0].category, Category::ToM);
        assert_eq!(items[0].correct_option(), "b");
    }

    #[test]
    fn qa_wrong_option_count() {
        let line = r#"{"id":"q1","category":"SI","question":"?","options":["a","b","c","d"],"answer":"A"}"#;
        let err = parse_qa(line, None).unwrap_err().to_string();
        assert!(err.contains("expected 5 options"), "{err}");
    }

    #[test]
    fn qa_bad_category_and_letter() {
        let cat = r#"{"id":"q1","category":"XX","question":"?","options":["a","b","c","d","e"],"answer":"A"}"#;
        assert!(parse_qa(cat, None)
            .unwrap_err()
            .to_string()
            .contains("unknown category"));
        let letter = r#"{"id":"q1","category":"SI","question":"?","options":["a","b","c","d","e"],"answer":"F"}"#;
        assert!(parse_qa(letter, None)
            .unwrap_err()
            .to_string()
            .contains("unknown answer letter"));
    }

    #[test]
    fn qa_unknown_fields_survive_round_trip() {
        let line = qa_line(r#","rationale":"because","difficulty":3,"subtype":"multi-span""#);
        let items = parse_qa(&line, None).unwrap();
        assert_eq!(items[0].subtype, Some(Subtype::MultiSpan));
        assert_eq!(items[0].extra["rationale"], Value::from("because"));
        let again = parse_qa(&qa_to_json_line(&items[0]), None).unwrap();
        assert_eq!(again, items);
    }

    #[test]
    fn qa_referenced_agents_checked_against_roster() {
        let ok = qa_line(r#","referenced_agents":["Jake","A2_ALICE"]"#);
        let items = parse_qa(&ok, Some(&roster())).unwrap();
        assert_eq!(items[0].referenced_agents[0].as_str(), "A1_JAKE");
        let bad = qa_line(r#","referenced_agents":["Bob"]"#);
        assert!(parse_qa(&bad, Some(&roster())).is_err());
    }

    fn rec(agent: &str, day: u32, start: &str, end: &str) -> CaptionRecord {
        CaptionRecord {
            agent: AgentId::new(agent).unwrap(),
            interval: TimeInterval::new(
                Timestamp::parse_clock(day, start).unwrap(),
                Timestamp::parse_clock(day, end).unwrap(),
            )
            .unwrap(),
            kind: CaptionKind::VisualCaption,
            text: "t".into(),
        }
    }

    #[test]
    fn bucket_floor_alignment() {
        let b = bucket_by_interval(&[rec("A1_JAKE", 3, "12430000", "12440000")], 10).unwrap();
        let key = *b.keys().next().unwrap();
        assert_eq!(key.to_string(), "DAY3_12400000");
    }

    #[test]
    fn bucket_by_start_containment() {
        let b = bucket_by_interval(&[rec("A1_JAKE", 3, "12390000", "12440000")], 10).unwrap();
        assert_eq!(b.keys().next().unwrap().to_string(), "DAY3_12300000");
    }

    #[test]
    fn two_agents_share_a_bucket() {
        let b = bucket_by_interval(
            &[
                rec("A1_JAKE", 3, "12410000", "12420000"),
                rec("A2_ALICE", 3, "12450000", "12460000"),
            ],
            10,
        )
        .unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.values().next().unwrap().len(), 2);
    }

    #[test]
    fn bucket_width_must_divide_hour() {
        assert!(matches!(bucket_by_interval(&[], 7), Err(CorpusError::BucketWidth(7))));
        assert!(bucket_by_interval(&[], 10).unwrap().is_empty());
    }

    #[test]
    fn last_bucket_of_day_is_valid() {
        let start = Timestamp::from_hms(1, 23, 50, 0).unwrap();
        let iv = bucket_interval(start, 10);
        assert_eq!(iv.end().to_string(), "DAY1_23595999");
    }

    #[test]
    fn stats_total_is_product() {
        let recs = vec![
            rec("A1_JAKE", 1, "10000000", "11000000"),
            rec("A2_ALICE", 1, "10000000", "10300000"),
        ];
        let s = CorpusStats::compute(&recs, &roster());
        assert_eq!(s.num_agents, 2);
        assert!((s.hours_per_agent - 0.75).abs() < 1e-12);
        assert!((s.total_hours - s.num_agents as f64 * s.hours_per_agent).abs() < 1e-9);
    }
}
