//! Transit travel-time band prediction from roadside imagery.
//!
//! The crate covers the whole desk-scale workflow: replaying vehicle-position
//! feeds ([`feed`]), proximity-triggered frame acquisition ([`trigger`]), a
//! synthetic camera and data source ([`synth`]), percentile band labeling
//! ([`labeling`]), augmentation ([`augment`]), a from-scratch vision
//! transformer ([`vit`]), cross-validated evaluation ([`eval`]), travel-time
//! regression ([`regression`]) and the end-to-end [`pipeline`].

pub mod augment;
pub mod error;
pub mod eval;
pub mod feed;
pub mod labeling;
pub mod manifest;
pub mod pipeline;
pub mod plot;
pub mod raster;
pub mod regression;
pub mod synth;
pub mod trigger;
pub mod vit;

pub use error::{Error, Result};
pub use feed::{Direction, FeedStream, VehiclePositionRecord};
pub use labeling::{BandThresholds, TravelTimeBand};
pub use manifest::ManifestRow;
pub use raster::RasterFrame;
pub use vit::{ViTConfig, ViTParameters};

/// Eastern Standard Time.
pub const DEFAULT_UTC_OFFSET_S: i64 = -5 * 3600;

/// Local wall-clock hour of a Unix timestamp.
pub fn local_hour(ts: i64, utc_offset_s: i64) -> u32 {
    ((ts + utc_offset_s).rem_euclid(86_400) / 3600) as u32
}

/// Derives an independent stream seed from a master seed and a label.
pub fn seed_for(master: u64, label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ master.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_hour_uses_offset() {
        // 2022-02-23 11:00 UTC is 06:00 EST.
        assert_eq!(local_hour(1_645_614_000, DEFAULT_UTC_OFFSET_S), 6);
        assert_eq!(local_hour(1_645_614_000, 0), 11);
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(seed_for(1, "a"), seed_for(1, "b"));
        assert_ne!(seed_for(1, "a"), seed_for(2, "a"));
        assert_eq!(seed_for(9, "x"), seed_for(9, "x"));
    }
}
