//! Travel-time provider contract with an on-disk response cache.
//!
//! Block drive and walk times can be populated from a remote directions
//! service. Every response is stored in a local JSON cache keyed by the
//! request so later runs are offline and deterministic. A cache miss with no
//! reachable provider is an error; values are never made up.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::io::write_atomic;
use crate::road_graph::{RoadGraph, TravelTimeTable, HOURS_PER_DAY};

/// Environment variable that overrides the cache location.
pub const CACHE_ENV_VAR: &str = "PARKSIM_DIRECTIONS_CACHE";

/// Hour used for walk requests; walking is assumed constant over the day.
pub const WALK_REQUEST_HOUR: u8 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TravelMode {
    Drive,
    Walk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TravelRequest {
    pub origin: [f64; 2],
    pub destination: [f64; 2],
    pub mode: TravelMode,
    pub hour: u8,
}

impl TravelRequest {
    /// Cache key; coordinates are rounded to 1e-7 degrees (about 1 cm).
    fn key(&self) -> String {
        format!(
            "{:.7},{:.7}>{:.7},{:.7}|{:?}|{}",
            self.origin[0],
            self.origin[1],
            self.destination[0],
            self.destination[1],
            self.mode,
            self.hour
        )
    }
}

impl std::fmt::Display for TravelRequest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.key())
    }
}

/// Anything that can answer a directions request in seconds.
pub trait TravelTimeProvider {
    fn travel_time(&mut self, request: &TravelRequest) -> Result<f64>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    #[serde(flatten)]
    request: TravelRequest,
    seconds: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CacheFile {
    entries: Vec<CacheEntry>,
}

/// Provider that always answers from the cache first and persists every
/// fresh remote answer.
pub struct CachedProvider<P> {
    remote: Option<P>,
    entries: BTreeMap<String, CacheEntry>,
    path: PathBuf,
}

/// Placeholder remote type for cache-only operation.
pub struct NoRemote;

impl TravelTimeProvider for NoRemote {
    fn travel_time(&mut self, request: &TravelRequest) -> Result<f64> {
        Err(Error::TravelTime {
            request: request.to_string(),
            reason: "no remote provider configured".into(),
        })
    }
}

impl CachedProvider<NoRemote> {
    pub fn offline(path: impl Into<PathBuf>) -> Result<Self> {
        Self::open(path, None)
    }
}

impl<P: TravelTimeProvider> CachedProvider<P> {
    pub fn with_remote(path: impl Into<PathBuf>, remote: P) -> Result<Self> {
        Self::open(path, Some(remote))
    }

    fn open(path: impl Into<PathBuf>, remote: Option<P>) -> Result<Self> {
        let path = path.into();
        let mut entries = BTreeMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let file: CacheFile = serde_json::from_str(&text)
                .map_err(|e| Error::parse(path.display().to_string(), e))?;
            for entry in file.entries {
                entries.insert(entry.request.key(), entry);
            }
        }
        Ok(CachedProvider {
            remote,
            entries,
            path,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn save(&self) -> Result<()> {
        let file = CacheFile {
            entries: self.entries.values().cloned().collect(),
        };
        let text =
            serde_json::to_string_pretty(&file).map_err(|e| Error::parse("directions cache", e))?;
        write_atomic(&self.path, text.as_bytes())
    }
}

impl<P: TravelTimeProvider> TravelTimeProvider for CachedProvider<P> {
    fn travel_time(&mut self, request: &TravelRequest) -> Result<f64> {
        let key = request.key();
        if let Some(hit) = self.entries.get(&key) {
            return Ok(hit.seconds);
        }
        let remote = self.remote.as_mut().ok_or_else(|| Error::TravelTime {
            request: key.clone(),
            reason: "not cached and no remote provider configured".into(),
        })?;
        let seconds = remote.travel_time(request)?;
        if !seconds.is_finite() || seconds <= 0.0 {
            return Err(Error::TravelTime {
                request: key,
                reason: format!("provider returned invalid duration {seconds}"),
            });
        }
        self.entries.insert(
            key,
            CacheEntry {
                request: *request,
                seconds,
            },
        );
        self.save()?;
        Ok(seconds)
    }
}

/// Queries `provider` for every block: drive time per hour between the
/// block's end intersections, plus one walk time.
pub fn populate_travel_times(
    g: &RoadGraph,
    provider: &mut impl TravelTimeProvider,
) -> Result<TravelTimeTable> {
    let mut table = TravelTimeTable::default();
    for e in g.edge_indices() {
        let from = g.node(g.tail(e));
        let to = g.node(g.head(e));
        let id = &g.edge(e).id;
        let mut request = TravelRequest {
            origin: [from.lat, from.lon],
            destination: [to.lat, to.lon],
            mode: TravelMode::Drive,
            hour: 0,
        };
        for hour in 0..HOURS_PER_DAY as u8 {
            request.hour = hour;
            table
                .drive
                .insert((id.clone(), hour), provider.travel_time(&request)?);
        }
        request.mode = TravelMode::Walk;
        request.hour = WALK_REQUEST_HOUR;
        table
            .walk
            .insert(id.clone(), provider.travel_time(&request)?);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road_graph::test_graphs::line;

    /// Fake directions service: drive = 10 s + hour, walk = 50 s.
    struct Fake {
        calls: usize,
        fail: bool,
    }

    impl TravelTimeProvider for Fake {
        fn travel_time(&mut self, request: &TravelRequest) -> Result<f64> {
            self.calls += 1;
            if self.fail {
                return Err(Error::TravelTime {
                    request: request.to_string(),
                    reason: "service unavailable".into(),
                });
            }
            Ok(match request.mode {
                TravelMode::Drive => 10.0 + f64::from(request.hour),
                TravelMode::Walk => 50.0,
            })
        }
    }

    #[test]
    fn populates_then_serves_offline() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.json");
        let g = line();
        let mut online = CachedProvider::with_remote(
            &path,
            Fake {
                calls: 0,
                fail: false,
            },
        )
        .unwrap();
        let table = populate_travel_times(&g, &mut online).unwrap();
        assert_eq!(table.drive[&("b".to_string(), 7)], 17.0);
        assert_eq!(table.walk["b"], 50.0);
        // Reverse blocks share coordinates pairwise only in opposite order, so
        // every block contributes 25 distinct requests.
        assert_eq!(online.len(), 25 * g.edge_count());

        let mut offline = CachedProvider::offline(&path).unwrap();
        let again = populate_travel_times(&g, &mut offline).unwrap();
        assert_eq!(again, table);
        let updated = g.with_travel_times(&again).unwrap();
        assert_eq!(updated.drive_time(g.edge_index("a").unwrap(), 3), 13.0);
    }

    #[test]
    fn remote_failure_is_an_error_not_a_guess() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.json");
        let mut provider = CachedProvider::with_remote(
            &path,
            Fake {
                calls: 0,
                fail: true,
            },
        )
        .unwrap();
        let err = populate_travel_times(&line(), &mut provider).unwrap_err();
        assert!(matches!(err, Error::TravelTime { .. }));
        assert!(provider.is_empty());
    }

    #[test]
    fn cache_hit_skips_remote() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.json");
        let req = TravelRequest {
            origin: [49.0, -123.0],
            destination: [49.001, -123.0],
            mode: TravelMode::Drive,
            hour: 8,
        };
        {
            let mut p = CachedProvider::with_remote(
                &path,
                Fake {
                    calls: 0,
                    fail: false,
                },
            )
            .unwrap();
            assert_eq!(p.travel_time(&req).unwrap(), 18.0);
        }
        // Remote is down now, but the cached answer is still served.
        let mut p = CachedProvider::with_remote(
            &path,
            Fake {
                calls: 0,
                fail: true,
            },
        )
        .unwrap();
        assert_eq!(p.travel_time(&req).unwrap(), 18.0);
        assert_eq!(p.remote.as_ref().unwrap().calls, 0);
        let mut miss = req;
        miss.hour = 9;
        assert!(p.travel_time(&miss).is_err());
    }
}
