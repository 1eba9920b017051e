//! Parsing and serialization of event timestamps.
//!
//! All clinical timestamps are UTC with minute resolution. Input accepts
//! `2015-03-01T10:30Z`, `2015-03-01T10:30:00Z`, and full RFC 3339 with a
//! numeric offset (converted to UTC). Output is the compact minute form,
//! extended with seconds only when they are nonzero.

use chrono::{DateTime, NaiveDateTime, TimeZone, Timelike, Utc};

const MINUTE_FMT: &str = "%Y-%m-%dT%H:%MZ";
const SECOND_FMT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid timestamp {input:?}: expected UTC like 2015-03-01T10:30Z")]
pub struct TimestampError {
    pub input: String,
}

pub fn parse_utc(input: &str) -> Result<DateTime<Utc>, TimestampError> {
    let s = input.trim();
    for fmt in [MINUTE_FMT, SECOND_FMT] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(Utc.from_utc_datetime(&naive));
        }
    }
    if let Ok(fixed) = DateTime::parse_from_rfc3339(s) {
        return Ok(fixed.with_timezone(&Utc));
    }
    Err(TimestampError {
        input: input.to_string(),
    })
}

pub fn format_utc(t: DateTime<Utc>) -> String {
    if t.second() == 0 && t.nanosecond() == 0 {
        t.format(MINUTE_FMT).to_string()
    } else {
        t.format(SECOND_FMT).to_string()
    }
}

/// Serde adapter for `DateTime<Utc>` fields using the compact UTC form.
pub mod ts {
    use super::*;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&format_utc(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(de)?;
        parse_utc(&raw).map_err(de::Error::custom)
    }
}

/// Serde adapter for optional timestamps; `null` and absent both map to `None`.
pub mod ts_opt {
    use super::*;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Option<DateTime<Utc>>, ser: S) -> Result<S::Ok, S::Error> {
        match t {
            Some(t) => ser.serialize_some(&format_utc(*t)),
            None => ser.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<Option<DateTime<Utc>>, D::Error> {
        let raw = Option::<String>::deserialize(de)?;
        match raw {
            Some(raw) => parse_utc(&raw).map(Some).map_err(de::Error::custom),
            None => Ok(None),
        }
    }
}
