use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::BusError;

/// A slash-separated topic path such as `state/follower`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Topic(String);

fn valid_segments(s: &str, allow_wildcard: bool) -> bool {
    !s.is_empty()
        && s.split('/').all(|seg| {
            !seg.is_empty()
                && !seg.chars().any(char::is_whitespace)
                && (!seg.contains('*') || (allow_wildcard && seg == "*"))
        })
}

impl Topic {
    pub fn new(name: impl Into<String>) -> Result<Self, BusError> {
        let name = name.into();
        if valid_segments(&name, false) {
            Ok(Topic(name))
        } else {
            Err(BusError::InvalidTopic(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }

    /// `prefix/self`, or `self` unchanged when `prefix` is empty.
    pub fn namespaced(&self, prefix: &str) -> Result<Topic, BusError> {
        if prefix.is_empty() {
            Ok(self.clone())
        } else {
            Topic::new(format!("{prefix}/{}", self.0))
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for Topic {
    type Err = BusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topic::new(s)
    }
}

impl Serialize for Topic {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Topic {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Topic::new(s).map_err(serde::de::Error::custom)
    }
}

/// A subscription pattern. Each `*` segment matches exactly one topic segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicPattern {
    raw: String,
}

impl TopicPattern {
    pub fn new(pattern: impl Into<String>) -> Result<Self, BusError> {
        let raw = pattern.into();
        if valid_segments(&raw, true) {
            Ok(TopicPattern { raw })
        } else {
            Err(BusError::InvalidPattern(raw))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        let mut pat = self.raw.split('/');
        let mut segs = topic.segments();
        loop {
            match (pat.next(), segs.next()) {
                (None, None) => return true,
                (Some(p), Some(s)) if p == "*" || p == s => {}
                _ => return false,
            }
        }
    }
}

impl From<&Topic> for TopicPattern {
    fn from(t: &Topic) -> Self {
        TopicPattern { raw: t.0.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic_validation() {
        assert!(Topic::new("obs/cam_wrist").is_ok());
        assert!(Topic::new("state").is_ok());
        for bad in ["", "a//b", "/a", "a/", "a b", "a/\tb", "a/*"] {
            assert!(Topic::new(bad).is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn pattern_validation() {
        assert!(TopicPattern::new("obs/*").is_ok());
        assert!(TopicPattern::new("*/*").is_ok());
        for bad in ["", "obs/ca*", "obs//x", "obs/**", "a b/*"] {
            assert!(TopicPattern::new(bad).is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn wildcard_matches_exactly_one_segment() {
        let p = TopicPattern::new("state/*").unwrap();
        assert!(p.matches(&Topic::new("state/follower").unwrap()));
        assert!(!p.matches(&Topic::new("state").unwrap()));
        assert!(!p.matches(&Topic::new("state/follower/x").unwrap()));
        assert!(!p.matches(&Topic::new("obs/cam0").unwrap()));
        let exact = TopicPattern::new("cmd/leader").unwrap();
        assert!(exact.matches(&Topic::new("cmd/leader").unwrap()));
        assert!(!exact.matches(&Topic::new("cmd/leaders").unwrap()));
    }
}
