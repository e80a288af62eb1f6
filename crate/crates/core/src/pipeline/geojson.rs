use serde_json::{json, Value};

use super::TimeEstimate;
use crate::error::{Error, Result};
use crate::road_graph::RoadGraph;

/// Which time a map is coloured by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Onstreet,
    Offstreet,
    Diff,
}

impl MapKind {
    pub const ALL: [MapKind; 3] = [MapKind::Onstreet, MapKind::Offstreet, MapKind::Diff];

    pub fn name(self) -> &'static str {
        match self {
            MapKind::Onstreet => "onstreet",
            MapKind::Offstreet => "offstreet",
            MapKind::Diff => "diff",
        }
    }

    fn value(self, r: &TimeEstimate) -> f64 {
        match self {
            MapKind::Onstreet => r.mean_onstreet_s,
            MapKind::Offstreet => r.mean_offstreet_s,
            MapKind::Diff => r.delta_s,
        }
    }
}

/// One FeatureCollection of block LineStrings for a single hour.
///
/// Coordinates are `[lon, lat]` from the block's end intersections. Besides
/// the three times each feature carries `value`, the time named by `kind`.
pub fn feature_collection(g: &RoadGraph, rows: &[&TimeEstimate], kind: MapKind) -> Result<Value> {
    let features = rows
        .iter()
        .map(|r| {
            let e = g.edge_index(&r.block_id)?;
            let (a, b) = (g.node(g.tail(e)), g.node(g.head(e)));
            Ok(json!({
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[a.lon, a.lat], [b.lon, b.lat]],
                },
                "properties": {
                    "block_id": r.block_id,
                    "hour": r.hour,
                    "t_on_s": r.mean_onstreet_s,
                    "t_off_s": r.mean_offstreet_s,
                    "delta_s": r.delta_s,
                    "value": kind.value(r),
                },
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}

pub fn to_bytes(v: &Value) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v).map_err(|e| Error::parse("geojson output", e))?;
    out.push(b'\n');
    Ok(out)
}
