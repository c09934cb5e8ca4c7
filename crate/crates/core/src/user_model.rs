//! Input data model: user objects, probe times and labels.
//!
//! Records arrive as newline-delimited JSON. Two shapes are accepted:
//!
//! * a tweet carrying a nested `user` object, whose own `created_at` becomes
//!   the probe time of the embedded user;
//! * a bare user object, whose probe time comes from a `probe_time` sidecar
//!   field or, failing that, a caller-supplied default (the lookup time).
//!
//! Labeled files add a top-level `label` field with value `bot` or `human`.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Twitter's legacy `created_at` layout, e.g. `Wed Oct 10 20:19:24 +0000 2018`.
const LEGACY_TIMESTAMP: &str = "%a %b %d %H:%M:%S %z %Y";

pub const MAX_SCREEN_NAME_LEN: usize = 15;

/// Binary ground-truth class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Human,
    Bot,
}

impl Label {
    pub fn is_bot(self) -> bool {
        self == Label::Bot
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Bot => Label::Human,
            Label::Human => Label::Bot,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bot => "bot",
            Label::Human => "human",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bot" => Ok(Label::Bot),
            "human" => Ok(Label::Human),
            other => Err(format!("unknown label {other:?} (expected \"bot\" or \"human\")")),
        }
    }
}

/// A screen name restricted to `[A-Za-z0-9_]{1,15}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct ScreenName(String);

impl ScreenName {
    pub fn new(name: &str) -> Result<Self, String> {
        if name.is_empty() {
            return Err("screen_name is empty".into());
        }
        if name.len() > MAX_SCREEN_NAME_LEN {
            return Err(format!(
                "screen_name {name:?} exceeds {MAX_SCREEN_NAME_LEN} characters"
            ));
        }
        if let Some(c) = name.chars().find(|c| !is_screen_name_char(*c)) {
            return Err(format!("screen_name {name:?} contains invalid character {c:?}"));
        }
        Ok(ScreenName(name.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ScreenName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn is_screen_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// One observed user object together with the time it was observed.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub user_id: String,
    pub screen_name: ScreenName,
    pub name: String,
    pub description: String,
    pub statuses_count: u64,
    pub followers_count: u64,
    pub friends_count: u64,
    pub favourites_count: u64,
    pub listed_count: u64,
    pub default_profile: bool,
    pub profile_use_background_image: bool,
    pub verified: bool,
    pub created_at: DateTime<Utc>,
    pub probe_time: DateTime<Utc>,
}

impl UserRecord {
    /// Serializes as a bare user object with an explicit `probe_time` sidecar,
    /// which `parse_record` accepts back without a default probe time.
    pub fn to_json_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("id_str".into(), Value::from(self.user_id.clone()));
        obj.insert("screen_name".into(), Value::from(self.screen_name.as_str()));
        obj.insert("name".into(), Value::from(self.name.clone()));
        obj.insert("description".into(), Value::from(self.description.clone()));
        obj.insert("statuses_count".into(), Value::from(self.statuses_count));
        obj.insert("followers_count".into(), Value::from(self.followers_count));
        obj.insert("friends_count".into(), Value::from(self.friends_count));
        obj.insert("favourites_count".into(), Value::from(self.favourites_count));
        obj.insert("listed_count".into(), Value::from(self.listed_count));
        obj.insert("default_profile".into(), Value::from(self.default_profile));
        obj.insert(
            "profile_use_background_image".into(),
            Value::from(self.profile_use_background_image),
        );
        obj.insert("verified".into(), Value::from(self.verified));
        obj.insert("created_at".into(), Value::from(format_timestamp(&self.created_at)));
        obj.insert("probe_time".into(), Value::from(format_timestamp(&self.probe_time)));
        Value::Object(obj)
    }

    pub fn to_json_line(&self) -> String {
        self.to_json_value().to_string()
    }
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Parses either RFC-3339 or Twitter's legacy timestamp layout.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(s) {
        return Ok(ts.with_timezone(&Utc));
    }
    DateTime::parse_from_str(s, LEGACY_TIMESTAMP)
        .map(|ts| ts.with_timezone(&Utc))
        .map_err(|_| format!("malformed timestamp {s:?}"))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("record is not a JSON object")]
    NotAnObject,
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` has the wrong type (expected {expected})")]
    WrongType {
        field: &'static str,
        expected: &'static str,
    },
    #[error("count `{0}` is negative")]
    NegativeCount(&'static str),
    #[error("count `{0}` does not fit a signed 64-bit integer")]
    CountOverflow(&'static str),
    #[error("field `{field}`: {message}")]
    Timestamp { field: &'static str, message: String },
    #[error("no probe time: record has neither a tweet timestamp, a `probe_time` field, nor a default")]
    MissingProbeTime,
    #[error("{0}")]
    ScreenName(String),
    #[error("{0}")]
    Label(String),
}

/// A rejected record, tagged with its 1-based ordinal in the input stream.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("record {ordinal}: {kind}")]
pub struct ParseError {
    pub ordinal: usize,
    pub kind: ParseErrorKind,
}

/// A parsed record plus its optional ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRecord {
    pub record: UserRecord,
    pub label: Option<Label>,
}

/// Parses one raw record (a tweet or a bare user object).
///
/// `default_probe` supplies query-time semantics for bare user objects that
/// carry no `probe_time` sidecar.
pub fn parse_record(
    raw: &str,
    default_probe: Option<DateTime<Utc>>,
) -> Result<ParsedRecord, ParseErrorKind> {
    let value: Value =
        serde_json::from_str(raw).map_err(|e| ParseErrorKind::Json(e.to_string()))?;
    parse_value(&value, default_probe)
}

pub fn parse_value(
    value: &Value,
    default_probe: Option<DateTime<Utc>>,
) -> Result<ParsedRecord, ParseErrorKind> {
    let outer = value.as_object().ok_or(ParseErrorKind::NotAnObject)?;

    let label = match outer.get("label") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.parse::<Label>().map_err(ParseErrorKind::Label)?),
        Some(_) => {
            return Err(ParseErrorKind::WrongType {
                field: "label",
                expected: "string",
            })
        }
    };

    let (user, probe_time) = match outer.get("user") {
        Some(Value::Object(user)) => {
            // Tweet: the embedded user was observed when the tweet was created.
            let probe = required_timestamp(outer, "created_at")?;
            (user, probe)
        }
        Some(_) => {
            return Err(ParseErrorKind::WrongType {
                field: "user",
                expected: "object",
            })
        }
        None => {
            let probe = match optional_timestamp(outer, "probe_time")? {
                Some(ts) => ts,
                None => default_probe.ok_or(ParseErrorKind::MissingProbeTime)?,
            };
            (outer, probe)
        }
    };

    let record = UserRecord {
        user_id: user_id(user)?,
        screen_name: {
            let raw = required_str(user, "screen_name")?;
            ScreenName::new(raw).map_err(ParseErrorKind::ScreenName)?
        },
        name: optional_str(user, "name")?,
        description: optional_str(user, "description")?,
        statuses_count: count(user, "statuses_count")?,
        followers_count: count(user, "followers_count")?,
        friends_count: count(user, "friends_count")?,
        favourites_count: count(user, "favourites_count")?,
        listed_count: count(user, "listed_count")?,
        default_profile: flag(user, "default_profile")?,
        profile_use_background_image: flag(user, "profile_use_background_image")?,
        verified: flag(user, "verified")?,
        created_at: required_timestamp(user, "created_at")?,
        probe_time,
    };
    Ok(ParsedRecord { record, label })
}

fn user_id(obj: &Map<String, Value>) -> Result<String, ParseErrorKind> {
    for key in ["id_str", "user_id", "id"] {
        match obj.get(key) {
            Some(Value::String(s)) if !s.is_empty() => return Ok(s.clone()),
            Some(Value::Number(n)) => return Ok(n.to_string()),
            _ => {}
        }
    }
    Err(ParseErrorKind::MissingField("id_str"))
}

fn required_str<'a>(
    obj: &'a Map<String, Value>,
    field: &'static str,
) -> Result<&'a str, ParseErrorKind> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s),
        None | Some(Value::Null) => Err(ParseErrorKind::MissingField(field)),
        Some(_) => Err(ParseErrorKind::WrongType {
            field,
            expected: "string",
        }),
    }
}

fn optional_str(obj: &Map<String, Value>, field: &'static str) -> Result<String, ParseErrorKind> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        None | Some(Value::Null) => Ok(String::new()),
        Some(_) => Err(ParseErrorKind::WrongType {
            field,
            expected: "string",
        }),
    }
}

fn count(obj: &Map<String, Value>, field: &'static str) -> Result<u64, ParseErrorKind> {
    match obj.get(field) {
        Some(Value::Number(n)) => {
            if let Some(v) = n.as_i64() {
                if v < 0 {
                    Err(ParseErrorKind::NegativeCount(field))
                } else {
                    Ok(v as u64)
                }
            } else if n.as_u64().is_some() {
                Err(ParseErrorKind::CountOverflow(field))
            } else {
                Err(ParseErrorKind::WrongType {
                    field,
                    expected: "integer",
                })
            }
        }
        None | Some(Value::Null) => Err(ParseErrorKind::MissingField(field)),
        Some(_) => Err(ParseErrorKind::WrongType {
            field,
            expected: "integer",
        }),
    }
}

fn flag(obj: &Map<String, Value>, field: &'static str) -> Result<bool, ParseErrorKind> {
    match obj.get(field) {
        Some(Value::Bool(b)) => Ok(*b),
        None | Some(Value::Null) => Ok(false),
        Some(_) => Err(ParseErrorKind::WrongType {
            field,
            expected: "boolean",
        }),
    }
}

fn optional_timestamp(
    obj: &Map<String, Value>,
    field: &'static str,
) -> Result<Option<DateTime<Utc>>, ParseErrorKind> {
    match obj.get(field) {
        Some(Value::String(s)) => parse_timestamp(s)
            .map(Some)
            .map_err(|message| ParseErrorKind::Timestamp { field, message }),
        None | Some(Value::Null) => Ok(None),
        Some(_) => Err(ParseErrorKind::WrongType {
            field,
            expected: "timestamp string",
        }),
    }
}

fn required_timestamp(
    obj: &Map<String, Value>,
    field: &'static str,
) -> Result<DateTime<Utc>, ParseErrorKind> {
    optional_timestamp(obj, field)?.ok_or(ParseErrorKind::MissingField(field))
}

/// Iterator over an NDJSON stream. Blank lines are skipped but still advance
/// the ordinal so error positions match line numbers.
pub struct RecordStream<R> {
    reader: R,
    default_probe: Option<DateTime<Utc>>,
    line: String,
    ordinal: usize,
}

impl<R: BufRead> RecordStream<R> {
    pub fn new(reader: R, default_probe: Option<DateTime<Utc>>) -> Self {
        RecordStream {
            reader,
            default_probe,
            line: String::new(),
            ordinal: 0,
        }
    }
}

impl<R: BufRead> Iterator for RecordStream<R> {
    type Item = Result<(usize, ParsedRecord), ParseError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line.clear();
            match self.reader.read_line(&mut self.line) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.ordinal += 1;
                    return Some(Err(ParseError {
                        ordinal: self.ordinal,
                        kind: ParseErrorKind::Json(format!("read error: {e}")),
                    }));
                }
            }
            self.ordinal += 1;
            let trimmed = self.line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let ordinal = self.ordinal;
            return Some(
                parse_record(trimmed, self.default_probe)
                    .map(|rec| (ordinal, rec))
                    .map_err(|kind| ParseError { ordinal, kind }),
            );
        }
    }
}
