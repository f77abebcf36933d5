//! Low-accuracy solar ephemeris (NOAA general solar-position equations).

use std::f64::consts::PI;

/// Zenith angle of the sun's centre at apparent sunrise/sunset, with
/// standard refraction and the solar semi-diameter folded in.
pub const EVENT_ZENITH_DEG: f64 = 90.833;

const UNIX_EPOCH_JD: f64 = 2_440_587.5;
const J2000_JD: f64 = 2_451_545.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarPosition {
    /// Declination in degrees.
    pub declination: f64,
    /// Equation of time in minutes.
    pub equation_of_time: f64,
}

fn rad(d: f64) -> f64 {
    d * PI / 180.0
}

fn deg(r: f64) -> f64 {
    r * 180.0 / PI
}

/// Sun declination and equation of time at `unix` seconds (UTC).
pub fn solar_position(unix: f64) -> SolarPosition {
    let jd = unix / 86_400.0 + UNIX_EPOCH_JD;
    let t = (jd - J2000_JD) / 36_525.0;

    let l0 = (280.466_46 + t * (36_000.769_83 + t * 0.000_303_2)).rem_euclid(360.0);
    let m = 357.529_11 + t * (35_999.050_29 - 0.000_153_7 * t);
    let e = 0.016_708_634 - t * (0.000_042_037 + 0.000_000_126_7 * t);
    let c = rad(m).sin() * (1.914_602 - t * (0.004_817 + 0.000_014 * t))
        + rad(2.0 * m).sin() * (0.019_993 - 0.000_101 * t)
        + rad(3.0 * m).sin() * 0.000_289;
    let true_long = l0 + c;
    let omega = 125.04 - 1934.136 * t;
    let apparent_long = true_long - 0.005_69 - 0.004_78 * rad(omega).sin();
    let mean_obliq = 23.0 + (26.0 + (21.448 - t * (46.815 + t * (0.000_59 - t * 0.001_813))) / 60.0) / 60.0;
    let obliq = mean_obliq + 0.002_56 * rad(omega).cos();

    let declination = deg((rad(obliq).sin() * rad(apparent_long).sin()).asin());
    let y = rad(obliq / 2.0).tan().powi(2);
    let (l0r, mr) = (rad(l0), rad(m));
    let eot = y * (2.0 * l0r).sin() - 2.0 * e * mr.sin()
        + 4.0 * e * y * mr.sin() * (2.0 * l0r).cos()
        - 0.5 * y * y * (4.0 * l0r).sin()
        - 1.25 * e * e * (2.0 * mr).sin();

    SolarPosition {
        declination,
        equation_of_time: 4.0 * deg(eot),
    }
}

/// Hour angle in degrees, wrapped to `[-180, 180)`; negative before transit.
pub fn hour_angle(unix: f64, longitude: f64, eot_minutes: f64) -> f64 {
    let minutes_of_day = unix.rem_euclid(86_400.0) / 60.0;
    let true_solar = minutes_of_day + eot_minutes + 4.0 * longitude;
    (true_solar / 4.0 - 180.0 + 180.0).rem_euclid(360.0) - 180.0
}

/// Cosine of the event hour angle. Outside `[-1, 1]` the sun never crosses
/// the event zenith: above 1 it stays below, below -1 it stays above.
pub fn event_hour_angle_cos(latitude: f64, declination: f64) -> f64 {
    let (phi, dec) = (rad(latitude), rad(declination));
    let denom = phi.cos() * dec.cos();
    let num = rad(EVENT_ZENITH_DEG).cos() - phi.sin() * dec.sin();
    if denom.abs() < 1e-12 {
        return if num > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    num / denom
}

/// Solar elevation in degrees (no refraction correction).
pub fn elevation(unix: f64, latitude: f64, longitude: f64) -> f64 {
    let pos = solar_position(unix);
    let ha = hour_angle(unix, longitude, pos.equation_of_time);
    let (phi, dec) = (rad(latitude), rad(pos.declination));
    let cos_zenith = phi.sin() * dec.sin() + phi.cos() * dec.cos() * rad(ha).cos();
    90.0 - deg(cos_zenith.clamp(-1.0, 1.0).acos())
}

pub(crate) fn event_hour_angle(latitude: f64, declination: f64) -> f64 {
    deg(event_hour_angle_cos(latitude, declination).clamp(-1.0, 1.0).acos())
}

#[cfg(test)]
mod tests {
    use super::*;

    // 2000-01-01T12:00:00Z
    const J2000_UNIX: f64 = 946_728_000.0;

    #[test]
    fn declination_extremes_near_solstices() {
        // 2022-06-21T12:00Z and 2022-12-21T12:00Z
        let june = solar_position(1_655_812_800.0).declination;
        let dec = solar_position(1_671_624_000.0).declination;
        assert!((june - 23.44).abs() < 0.05, "{june}");
        assert!((dec + 23.44).abs() < 0.05, "{dec}");
    }

    #[test]
    fn equation_of_time_early_november_peak() {
        // 2022-11-03T12:00Z, EoT is close to its annual maximum of ~16.4 min.
        let eot = solar_position(1_667_476_800.0).equation_of_time;
        assert!((eot - 16.4).abs() < 0.2, "{eot}");
    }

    #[test]
    fn hour_angle_is_zero_at_greenwich_apparent_noon() {
        let pos = solar_position(J2000_UNIX);
        let noon = J2000_UNIX - pos.equation_of_time * 60.0;
        assert!(hour_angle(noon, 0.0, pos.equation_of_time).abs() < 1e-9);
    }
}
