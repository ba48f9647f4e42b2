//! Frame manifests shared by the acquisition, labeling and augmentation stages.
//!
//! Base columns are `frame_path,trip_id,direction,capture_ts,session_id`.
//! Labeling appends `eff_tt_s,band`; augmentation appends
//! `source_frame_id,actions,magnitudes`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::feed::Direction;
use crate::labeling::TravelTimeBand;

pub const BASE_COLUMNS: [&str; 5] = ["frame_path", "trip_id", "direction", "capture_ts", "session_id"];
pub const LABEL_COLUMNS: [&str; 2] = ["eff_tt_s", "band"];
pub const LINEAGE_COLUMNS: [&str; 3] = ["source_frame_id", "actions", "magnitudes"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLabel {
    pub eff_tt_s: f64,
    pub band: TravelTimeBand,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lineage {
    /// Empty for original frames.
    pub source_frame_id: String,
    pub actions: String,
    pub magnitudes: String,
}

impl Lineage {
    pub fn is_original(&self) -> bool {
        self.source_frame_id.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub frame_path: String,
    pub trip_id: String,
    pub direction: Direction,
    pub capture_ts: i64,
    pub session_id: String,
    pub label: Option<FrameLabel>,
    pub lineage: Option<Lineage>,
}

impl ManifestRow {
    pub fn is_original(&self) -> bool {
        self.lineage.as_ref().is_none_or(Lineage::is_original)
    }

    pub fn band(&self) -> Option<TravelTimeBand> {
        self.label.map(|l| l.band)
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let base: Vec<usize> = BASE_COLUMNS
        .iter()
        .map(|c| col(c).ok_or_else(|| Error::Format(format!("{}: missing column {c}", path.display()))))
        .collect::<Result<_>>()?;
    let label_cols = (col("eff_tt_s"), col("band"));
    let lineage_cols = (col("source_frame_id"), col("actions"), col("magnitudes"));

    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let bad = |what: &str| Error::Format(format!("{} row {}: bad {what}", path.display(), i + 2));
        let field = |c: usize| rec.get(c).unwrap_or("");
        let direction = Direction::parse_name(field(base[2])).ok_or_else(|| bad("direction"))?;
        let capture_ts = field(base[3]).parse().map_err(|_| bad("capture_ts"))?;
        let label = match label_cols {
            (Some(t), Some(b)) if !field(b).is_empty() => Some(FrameLabel {
                eff_tt_s: field(t).parse().map_err(|_| bad("eff_tt_s"))?,
                band: field(b).parse().map_err(|_| bad("band"))?,
            }),
            _ => None,
        };
        let lineage = match lineage_cols {
            (Some(s), Some(a), Some(m)) => Some(Lineage {
                source_frame_id: field(s).to_string(),
                actions: field(a).to_string(),
                magnitudes: field(m).to_string(),
            }),
            _ => None,
        };
        rows.push(ManifestRow {
            frame_path: field(base[0]).to_string(),
            trip_id: field(base[1]).to_string(),
            direction,
            capture_ts,
            session_id: field(base[4]).to_string(),
            label,
            lineage,
        });
    }
    Ok(rows)
}

/// Writes rows; label and lineage columns appear when the first row has them.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let with_label = rows.first().is_some_and(|r| r.label.is_some());
    let with_lineage = rows.first().is_some_and(|r| r.lineage.is_some());
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    if with_label {
        header.extend(LABEL_COLUMNS);
    }
    if with_lineage {
        header.extend(LINEAGE_COLUMNS);
    }
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        let mut rec = vec![
            row.frame_path.clone(),
            row.trip_id.clone(),
            row.direction.code().to_string(),
            row.capture_ts.to_string(),
            row.session_id.clone(),
        ];
        if with_label {
            let label = row
                .label
                .ok_or_else(|| Error::Data(format!("row for {} lacks a label", row.frame_path)))?;
            rec.push(label.eff_tt_s.to_string());
            rec.push(label.band.to_string());
        }
        if with_lineage {
            let l = row.lineage.clone().unwrap_or_default();
            rec.extend([l.source_frame_id, l.actions, l.magnitudes]);
        }
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(path: &str) -> ManifestRow {
        ManifestRow {
            frame_path: path.into(),
            trip_id: "t1".into(),
            direction: Direction::Inbound,
            capture_ts: 1_645_614_000,
            session_id: "S00001".into(),
            label: None,
            lineage: None,
        }
    }

    #[test]
    fn round_trips_with_and_without_optional_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let plain = vec![row("a.ppm"), row("b.ppm")];
        write_manifest(&p, &plain).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), plain);

        let labeled: Vec<_> = plain
            .into_iter()
            .map(|mut r| {
                r.label = Some(FrameLabel {
                    eff_tt_s: 121.5,
                    band: TravelTimeBand::AboveAverage,
                });
                r.lineage = Some(Lineage::default());
                r
            })
            .collect();
        write_manifest(&p, &labeled).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(
            "frame_path,trip_id,direction,capture_ts,session_id,eff_tt_s,band,source_frame_id,actions,magnitudes\n"
        ));
        assert_eq!(read_manifest(&p).unwrap(), labeled);
    }
}
