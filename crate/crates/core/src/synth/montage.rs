//! 64-channel 10-10 montage with flat scalp coordinates.

/// Rows of the montage from front to back. Within a row channels run left to
/// right and are spread evenly over the row's width.
const ROWS: [(&[&str], f64, f64); 10] = [
    (&["Fp1", "Fpz", "Fp2"], 4.0, 1.6),
    (&["AF7", "AF3", "AFz", "AF4", "AF8"], 3.0, 3.2),
    (&["F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8"], 2.0, 3.8),
    (&["FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8"], 1.0, 4.0),
    (&["T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8"], 0.0, 4.0),
    (&["TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8"], -1.0, 4.0),
    (&["P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8"], -2.0, 3.8),
    (&["PO7", "PO5", "PO3", "POz", "PO4", "PO6", "PO8"], -3.0, 3.2),
    (&["O1", "Oz", "O2"], -4.0, 1.6),
    (&["Iz"], -5.0, 0.0),
];

/// (name, x, y) with x to the right and y to the front.
pub fn montage() -> Vec<(String, f64, f64)> {
    let mut out = Vec::with_capacity(64);
    for (names, y, half_width) in ROWS {
        let n = names.len();
        for (i, name) in names.iter().enumerate() {
            let x = if n == 1 {
                0.0
            } else {
                -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64
            };
            out.push((name.to_string(), x, y));
        }
    }
    out
}

pub fn montage_channels() -> Vec<String> {
    montage().into_iter().map(|(n, _, _)| n).collect()
}

/// Default injection target: temporal and adjacent central sites.
pub fn affected_channels() -> Vec<String> {
    ["T7", "T8", "FT7", "FT8", "TP7", "TP8", "C5", "C6"].iter().map(|s| s.to_string()).collect()
}

/// Position of a channel; channels outside the montage sit at the vertex.
pub fn position(name: &str) -> (f64, f64) {
    montage()
        .into_iter()
        .find(|(n, _, _)| n == name)
        .map_or((0.0, 0.0), |(_, x, y)| (x, y))
}
