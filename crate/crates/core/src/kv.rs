//! `key=value` line blocks used inside checkpoint and embedding files.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

pub(crate) struct KvBlock {
    what: &'static str,
    entries: BTreeMap<String, String>,
}

pub(crate) fn parse(text: &str, what: &'static str) -> Result<KvBlock> {
    let mut entries = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(what, format!("expected key=value, got {line:?}")))?;
        if entries.insert(k.trim().to_owned(), v.trim().to_owned()).is_some() {
            return Err(Error::format(what, format!("duplicate key {k:?}")));
        }
    }
    Ok(KvBlock { what, entries })
}

impl KvBlock {
    pub(crate) fn get<V: FromStr>(&mut self, key: &str) -> Result<V> {
        let raw = self
            .entries
            .remove(key)
            .ok_or_else(|| Error::format(self.what, format!("missing key {key:?}")))?;
        raw.parse()
            .map_err(|_| Error::format(self.what, format!("bad value for {key:?}: {raw:?}")))
    }

    pub(crate) fn get_str(&mut self, key: &str) -> Result<String> {
        self.get(key)
    }

    /// Fails on keys that were never read.
    pub(crate) fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::format(self.what, format!("unknown key {k:?}"))),
            None => Ok(()),
        }
    }
}
