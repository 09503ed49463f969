//! User profiles and user-local calendar arithmetic.

use chrono::{DateTime, Datelike, Duration, FixedOffset, NaiveDate, NaiveTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{Family, Store};
use crate::types::UserId;

pub const MIN_TZ_OFFSET: i32 = -720;
pub const MAX_TZ_OFFSET: i32 = 840;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub display_name: String,
    /// Fixed offset from UTC in minutes; fixed for the life of the profile
    /// because journal keys embed the local day.
    pub tz_offset_minutes: i32,
    pub created_at: DateTime<Utc>,
}

impl UserProfile {
    pub fn new(
        user_id: UserId,
        display_name: impl Into<String>,
        tz_offset_minutes: i32,
        created_at: DateTime<Utc>,
    ) -> Result<Self> {
        validate_user_id(&user_id)?;
        if !(MIN_TZ_OFFSET..=MAX_TZ_OFFSET).contains(&tz_offset_minutes) {
            return Err(Error::validation(format!(
                "timezone offset {tz_offset_minutes} outside [{MIN_TZ_OFFSET}, {MAX_TZ_OFFSET}] minutes"
            )));
        }
        Ok(UserProfile {
            user_id,
            display_name: display_name.into(),
            tz_offset_minutes,
            created_at,
        })
    }

    pub fn offset(&self) -> FixedOffset {
        FixedOffset::east_opt(self.tz_offset_minutes * 60).expect("offset validated")
    }

    pub fn local(&self, t: DateTime<Utc>) -> DateTime<FixedOffset> {
        t.with_timezone(&self.offset())
    }

    pub fn local_day(&self, t: DateTime<Utc>) -> NaiveDate {
        self.local(t).date_naive()
    }

    /// UTC instant of local midnight starting `day`.
    pub fn day_start(&self, day: NaiveDate) -> DateTime<Utc> {
        self.at_local(day, NaiveTime::MIN)
    }

    pub fn at_local(&self, day: NaiveDate, time: NaiveTime) -> DateTime<Utc> {
        self.offset()
            .from_local_datetime(&day.and_time(time))
            .single()
            .expect("fixed offsets are unambiguous")
            .with_timezone(&Utc)
    }

    /// Half-open UTC window covering one local day.
    pub fn day_window(&self, day: NaiveDate) -> (DateTime<Utc>, DateTime<Utc>) {
        (self.day_start(day), self.day_start(day) + Duration::days(1))
    }
}

/// Monday of the week containing `day`.
pub fn week_start(day: NaiveDate) -> NaiveDate {
    day - Duration::days(day.weekday().num_days_from_monday() as i64)
}

/// Parses `+08:00`, `-0530`, `UTC+8` or a bare minute count.
pub fn parse_tz_offset(s: &str) -> Result<i32> {
    let bad = || Error::validation(format!("invalid timezone `{s}`; expected e.g. +08:00"));
    let t = s.trim();
    let t = t.strip_prefix("UTC").or_else(|| t.strip_prefix("utc")).unwrap_or(t);
    if t.is_empty() || t == "Z" {
        return Ok(0);
    }
    let minutes = if let Some(rest) = t.strip_prefix(['+', '-']) {
        let sign = if t.starts_with('-') { -1 } else { 1 };
        let (h, m) = match rest.split_once(':') {
            Some((h, m)) => (h, m),
            None if rest.len() == 4 => rest.split_at(2),
            None => (rest, "0"),
        };
        let h: i32 = h.parse().map_err(|_| bad())?;
        let m: i32 = m.parse().map_err(|_| bad())?;
        if !(0..60).contains(&m) {
            return Err(bad());
        }
        sign * (h * 60 + m)
    } else {
        t.parse().map_err(|_| bad())?
    };
    if !(MIN_TZ_OFFSET..=MAX_TZ_OFFSET).contains(&minutes) {
        return Err(bad());
    }
    Ok(minutes)
}

/// Ids appear inside store keys, so they are restricted to a safe alphabet.
pub fn validate_user_id(id: &UserId) -> Result<()> {
    let s = id.as_str();
    if s.is_empty() || s.len() > 64 || !s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(Error::validation(format!("invalid user id `{s}`")));
    }
    Ok(())
}

fn user_key(id: &UserId) -> String {
    format!("user/{id}")
}

/// Creates a profile; fails if the id is taken.
pub fn create_user(store: &Store, profile: &UserProfile) -> Result<()> {
    store.transact(Family::Users, |txn| {
        let key = user_key(&profile.user_id);
        if txn.get::<UserProfile>(&key)?.is_some() {
            return Err(Error::validation(format!("user `{}` already exists", profile.user_id)));
        }
        txn.put(&key, profile)
    })
}

pub fn get_user(store: &Store, id: &UserId) -> Result<UserProfile> {
    store
        .get(Family::Users, &user_key(id))?
        .ok_or_else(|| Error::not_found(format!("user `{id}`")))
}

pub fn list_users(store: &Store) -> Result<Vec<UserProfile>> {
    Ok(store
        .scan(Family::Users, "user/")?
        .into_iter()
        .map(|(_, u)| u)
        .collect())
}
