//! Severity table: 20 distortion types × 10 levels.
//!
//! Every level is stored explicitly; the values were generated by linear
//! interpolation between the level-1 and level-10 extremes and rounded.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const TYPE_COUNT: u8 = 20;
pub const LEVEL_COUNT: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionRow {
    pub type_id: u8,
    /// Label of the matching KADID-10k distortion (`T1`, `T3`, ...).
    pub kadid_tag: &'static str,
    pub name: &'static str,
    /// Directory-safe short name.
    pub slug: &'static str,
    /// One or two parameter names; two-parameter rows use both columns.
    pub params: &'static [&'static str],
    pub values: [[f64; 2]; 10],
}

const fn one(v: [f64; 10]) -> [[f64; 2]; 10] {
    let mut out = [[0.0; 2]; 10];
    let mut i = 0;
    while i < 10 {
        out[i][0] = v[i];
        i += 1;
    }
    out
}

pub static TABLE: [DistortionRow; 20] = [
    DistortionRow {
        type_id: 1,
        kadid_tag: "T1",
        name: "Gaussian noise",
        slug: "gaussian_noise",
        params: &["sigma"],
        values: one([0.002, 0.004, 0.006, 0.009, 0.011, 0.013, 0.015, 0.018, 0.020, 0.022]),
    },
    DistortionRow {
        type_id: 2,
        kadid_tag: "T3",
        name: "Multiplicative noise",
        slug: "multiplicative_noise",
        params: &["sigma"],
        values: one([0.002, 0.005, 0.008, 0.011, 0.014, 0.018, 0.021, 0.024, 0.027, 0.030]),
    },
    DistortionRow {
        type_id: 3,
        kadid_tag: "T5",
        name: "Brighten",
        slug: "brighten",
        params: &["gamma"],
        values: one([0.960, 0.958, 0.957, 0.955, 0.953, 0.952, 0.950, 0.948, 0.947, 0.945]),
    },
    DistortionRow {
        type_id: 4,
        kadid_tag: "T6",
        name: "Darken",
        slug: "darken",
        params: &["gamma"],
        values: one([1.100, 1.103, 1.107, 1.110, 1.113, 1.117, 1.120, 1.123, 1.127, 1.130]),
    },
    DistortionRow {
        type_id: 5,
        kadid_tag: "T8",
        name: "Jitter",
        slug: "jitter",
        params: &["amp_px"],
        values: one([1.0, 1.4, 1.9, 2.3, 2.8, 3.2, 3.7, 4.1, 4.6, 5.0]),
    },
    DistortionRow {
        type_id: 6,
        kadid_tag: "T9",
        name: "Patches",
        slug: "patches",
        params: &["patch_size", "count"],
        values: [
            [4.0, 1.0],
            [5.0, 2.0],
            [5.0, 2.0],
            [6.0, 3.0],
            [7.0, 3.0],
            [7.0, 4.0],
            [8.0, 4.0],
            [9.0, 5.0],
            [9.0, 5.0],
            [10.0, 6.0],
        ],
    },
    DistortionRow {
        type_id: 7,
        kadid_tag: "T10",
        name: "Pixelate",
        slug: "pixelate",
        params: &["factor"],
        values: one([2.0, 2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0, 3.0]),
    },
    DistortionRow {
        type_id: 8,
        kadid_tag: "T11",
        name: "Quantization",
        slug: "quantization",
        params: &["bits"],
        values: one([8.0, 8.0, 7.0, 7.0, 7.0, 6.0, 6.0, 6.0, 5.0, 5.0]),
    },
    DistortionRow {
        type_id: 9,
        kadid_tag: "T12",
        name: "Fog",
        slug: "fog",
        params: &["alpha"],
        values: one([0.020, 0.030, 0.040, 0.050, 0.060, 0.070, 0.080, 0.090, 0.100, 0.110]),
    },
    DistortionRow {
        type_id: 10,
        kadid_tag: "T13",
        name: "Color cast cool",
        slug: "color_cast_cool",
        params: &["shift"],
        values: one([0.020, 0.027, 0.033, 0.040, 0.047, 0.053, 0.060, 0.067, 0.073, 0.080]),
    },
    DistortionRow {
        type_id: 11,
        kadid_tag: "T15",
        name: "Chromatic aberration",
        slug: "chromatic_aberration",
        params: &["shift_px"],
        values: one([1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0]),
    },
    DistortionRow {
        type_id: 12,
        kadid_tag: "T16",
        name: "Sparse sampling",
        slug: "sparse_sampling",
        params: &["fraction"],
        values: one([0.010, 0.018, 0.026, 0.033, 0.041, 0.049, 0.057, 0.064, 0.072, 0.080]),
    },
    DistortionRow {
        type_id: 13,
        kadid_tag: "T17",
        name: "JPEG compression",
        slug: "jpeg",
        params: &["quality"],
        values: one([95.0, 92.0, 90.0, 87.0, 85.0, 82.0, 80.0, 77.0, 75.0, 72.0]),
    },
    DistortionRow {
        type_id: 14,
        kadid_tag: "T18",
        name: "Gaussian blur",
        slug: "gaussian_blur",
        params: &["sigma"],
        values: one([0.200, 0.222, 0.244, 0.267, 0.289, 0.311, 0.333, 0.356, 0.378, 0.400]),
    },
    DistortionRow {
        type_id: 15,
        kadid_tag: "T19",
        name: "Lens blur",
        slug: "lens_blur",
        params: &["radius_px"],
        values: one([1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0]),
    },
    DistortionRow {
        type_id: 16,
        kadid_tag: "T20",
        name: "Motion blur",
        slug: "motion_blur",
        params: &["length_px"],
        values: one([3.0, 3.0, 3.0, 3.0, 3.0, 4.0, 4.0, 4.0, 4.0, 4.0]),
    },
    DistortionRow {
        type_id: 17,
        kadid_tag: "T22",
        name: "Tilt-stretch",
        slug: "tilt_stretch",
        params: &["scale_x"],
        values: one([0.970, 0.968, 0.966, 0.963, 0.961, 0.959, 0.957, 0.954, 0.952, 0.950]),
    },
    DistortionRow {
        type_id: 18,
        kadid_tag: "T23",
        name: "Vignette",
        slug: "vignette",
        params: &["strength"],
        values: one([0.080, 0.091, 0.102, 0.113, 0.124, 0.136, 0.147, 0.158, 0.169, 0.180]),
    },
    DistortionRow {
        type_id: 19,
        kadid_tag: "T24",
        name: "Contrast compression",
        slug: "contrast_compression",
        params: &["alpha"],
        values: one([0.940, 0.933, 0.927, 0.920, 0.913, 0.907, 0.900, 0.893, 0.887, 0.880]),
    },
    DistortionRow {
        type_id: 20,
        kadid_tag: "T25",
        name: "Non-uniform blur",
        slug: "non_uniform_blur",
        params: &["sigma_lo", "sigma_hi"],
        values: [
            [0.2, 0.4],
            [0.3, 0.6],
            [0.3, 0.9],
            [0.4, 1.1],
            [0.5, 1.3],
            [0.5, 1.6],
            [0.6, 1.8],
            [0.7, 2.0],
            [0.7, 2.3],
            [0.8, 2.5],
        ],
    },
];

pub fn row(type_id: u8) -> Result<&'static DistortionRow> {
    if !(1..=TYPE_COUNT).contains(&type_id) {
        return Err(Error::invalid(format!("degradation type {type_id} outside 1..=20")));
    }
    Ok(&TABLE[usize::from(type_id - 1)])
}

pub(crate) fn check_level(level: u8) -> Result<()> {
    if (1..=LEVEL_COUNT).contains(&level) {
        Ok(())
    } else {
        Err(Error::invalid(format!("severity level {level} outside 1..=10")))
    }
}

/// Tabulated parameter values for one (type, level) cell.
pub fn severity_params(type_id: u8, level: u8) -> Result<BTreeMap<&'static str, f64>> {
    let r = row(type_id)?;
    check_level(level)?;
    let vals = r.values[usize::from(level - 1)];
    Ok(r.params.iter().zip(vals).map(|(&name, v)| (name, v)).collect())
}

/// Flat rows `(type_id, kadid_tag, name, level, param, value)` for audit export.
pub fn parameter_rows() -> Vec<(u8, &'static str, &'static str, u8, &'static str, f64)> {
    let mut out = Vec::new();
    for r in &TABLE {
        for level in 1..=LEVEL_COUNT {
            let vals = r.values[usize::from(level - 1)];
            for (p, v) in r.params.iter().zip(vals) {
                out.push((r.type_id, r.kadid_tag, r.name, level, *p, v));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        assert_eq!(severity_params(1, 1).unwrap()["sigma"], 0.002);
        assert_eq!(severity_params(1, 10).unwrap()["sigma"], 0.022);
        assert_eq!(severity_params(13, 1).unwrap()["quality"], 95.0);
        assert_eq!(severity_params(13, 10).unwrap()["quality"], 72.0);
        assert_eq!(severity_params(8, 10).unwrap()["bits"], 5.0);
        let p = severity_params(6, 10).unwrap();
        assert_eq!((p["patch_size"], p["count"]), (10.0, 6.0));
    }

    #[test]
    fn out_of_range() {
        assert!(severity_params(0, 1).is_err());
        assert!(severity_params(21, 1).is_err());
        assert!(severity_params(1, 0).is_err());
        assert!(severity_params(1, 11).is_err());
    }

    #[test]
    fn ids_are_positional() {
        for (i, r) in TABLE.iter().enumerate() {
            assert_eq!(usize::from(r.type_id), i + 1);
        }
        assert_eq!(parameter_rows().len(), 18 * 10 + 2 * 20);
    }

    #[test]
    fn severity_scalar_is_monotone() {
        // (type, column, increasing?) for the scalar that controls severity
        let expect = [
            (1, 0, true),
            (2, 0, true),
            (3, 0, false),
            (4, 0, true),
            (5, 0, true),
            (6, 0, true),
            (6, 1, true),
            (7, 0, true),
            (8, 0, false),
            (9, 0, true),
            (10, 0, true),
            (11, 0, true),
            (12, 0, true),
            (13, 0, false),
            (14, 0, true),
            (15, 0, true),
            (16, 0, true),
            (17, 0, false),
            (18, 0, true),
            (19, 0, false),
            (20, 0, true),
            (20, 1, true),
        ];
        for (t, col, up) in expect {
            let v = row(t).unwrap().values;
            for w in v.windows(2) {
                let (a, b) = (w[0][col], w[1][col]);
                assert!(if up { b >= a } else { b <= a }, "type {t} column {col}");
            }
        }
        assert_eq!(row(3).unwrap().values[0][0], 0.960);
        assert_eq!(row(3).unwrap().values[9][0], 0.945);
        assert_eq!(row(4).unwrap().values[0][0], 1.100);
        assert_eq!(row(4).unwrap().values[9][0], 1.130);
    }
}
