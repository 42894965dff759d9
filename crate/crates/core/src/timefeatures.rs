//! Calendar coordinates derived from timestamps.
//!
//! A timestamp maps to `(time_of_day, day_of_week)` in `[0, 1)²` plus a
//! weekend flag. Timestamps are naive local times; no timezone or
//! daylight-saving handling is attempted.

use chrono::{Datelike, NaiveDateTime, Timelike};
use ndarray::Array2;

/// Coordinates of one timestamp in the neural-field input domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuxCoordinates {
    /// Seconds since midnight over 86400.
    pub time_of_day: f64,
    /// Weekday index (Monday = 0) over 7.
    pub day_of_week: f64,
    pub weekend: bool,
}

impl AuxCoordinates {
    pub fn as_pair(&self) -> [f64; 2] {
        [self.time_of_day, self.day_of_week]
    }
}

pub fn extract_coords(timestamp: &NaiveDateTime) -> AuxCoordinates {
    let weekday = timestamp.weekday().num_days_from_monday();
    let seconds = timestamp.num_seconds_from_midnight();
    AuxCoordinates {
        time_of_day: seconds as f64 / 86_400.0,
        day_of_week: weekday as f64 / 7.0,
        weekend: weekday >= 5,
    }
}

/// One row per timestamp: `[time_of_day, day_of_week]`, followed by the
/// weekend flag as 0/1 when `with_weekend` is set.
pub fn coords_for_window(timestamps: &[NaiveDateTime], with_weekend: bool) -> Array2<f64> {
    let width = if with_weekend { 3 } else { 2 };
    let mut out = Array2::zeros((timestamps.len(), width));
    for (mut row, ts) in out.rows_mut().into_iter().zip(timestamps) {
        let c = extract_coords(ts);
        row[0] = c.time_of_day;
        row[1] = c.day_of_week;
        if with_weekend {
            row[2] = if c.weekend { 1.0 } else { 0.0 };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};
    use proptest::prelude::*;

    fn at(y: i32, m: u32, d: u32, h: u32, min: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, min, 0).unwrap()
    }

    #[test]
    fn monday_midnight_is_origin() {
        let c = extract_coords(&at(2024, 1, 1, 0, 0));
        assert_eq!(c, AuxCoordinates { time_of_day: 0.0, day_of_week: 0.0, weekend: false });
    }

    #[test]
    fn noon_is_half() {
        for day in 1..=7 {
            assert_eq!(extract_coords(&at(2024, 1, day, 12, 0)).time_of_day, 0.5);
        }
    }

    #[test]
    fn metr_la_start_date() {
        let ts = at(2012, 3, 1, 8, 30);
        let c = extract_coords(&ts);
        let weekday = seafield_oracles::zeller_weekday(2012, 3, 1);
        assert_eq!(weekday, 3);
        assert_eq!(c.day_of_week, weekday as f64 / 7.0);
        assert_eq!(c.time_of_day, 510.0 / 1440.0);
        assert!(!c.weekend);
    }

    #[test]
    fn window_from_monday_midnight() {
        let start = at(2024, 1, 1, 0, 0);
        let ts: Vec<_> = (0..12).map(|i| start + Duration::minutes(5 * i)).collect();
        let m = coords_for_window(&ts, false);
        assert_eq!(m.shape(), &[12, 2]);
        for i in 0..12 {
            assert_eq!(m[[i, 0]], (5 * i) as f64 / 1440.0);
            assert_eq!(m[[i, 1]], 0.0);
        }
    }

    #[test]
    fn sunday_to_monday_wraps_day_of_week() {
        let start = at(2024, 1, 7, 23, 0);
        let ts: Vec<_> = (0..24).map(|i| start + Duration::minutes(5 * i)).collect();
        let m = coords_for_window(&ts, false);
        for (i, t) in ts.iter().enumerate() {
            let w = seafield_oracles::zeller_weekday(t.year(), t.month(), t.day());
            assert_eq!(m[[i, 1]], w as f64 / 7.0);
        }
        assert_eq!(m[[11, 1]], 6.0 / 7.0);
        assert_eq!(m[[12, 1]], 0.0);
    }

    #[test]
    fn friday_to_saturday_flips_weekend() {
        let start = at(2024, 1, 5, 23, 30);
        let ts: Vec<_> = (0..12).map(|i| start + Duration::minutes(5 * i)).collect();
        let m = coords_for_window(&ts, true);
        assert_eq!(m.shape(), &[12, 3]);
        let flags: Vec<f64> = m.column(2).to_vec();
        assert_eq!(&flags[..6], &[0.0; 6]);
        assert_eq!(&flags[6..], &[1.0; 6]);
    }

    proptest! {
        #[test]
        fn weekly_periodic(minutes in 0i64..(60 * 24 * 365 * 5)) {
            let t = at(2010, 1, 1, 0, 0) + Duration::minutes(minutes);
            prop_assert_eq!(extract_coords(&t), extract_coords(&(t + Duration::days(7))));
        }

        #[test]
        fn time_of_day_slope_within_a_day(day in 0i64..3000, a in 0i64..1440, b in 0i64..1440) {
            let base = at(2010, 1, 1, 0, 0) + Duration::days(day);
            let ca = extract_coords(&(base + Duration::minutes(a)));
            let cb = extract_coords(&(base + Duration::minutes(b)));
            prop_assert!(((cb.time_of_day - ca.time_of_day) - (b - a) as f64 / 1440.0).abs() < 1e-12);
            prop_assert!(ca.time_of_day >= 0.0 && ca.time_of_day < 1.0);
        }
    }
}
