//! Three images, four scored detections, labels worked out by hand.
//!
//! ```text
//! image a: regular (0,0,10,20); ignore (50,0,10,20)
//!   0.9 at (0,0,10,20)   iou 1 with the regular box        -> TP
//!   0.8 at (51,0,10,20)  iou 180/220 with the ignore box   -> ignored
//! image b: regular (0,0,10,20)
//!   0.7 at (30,30,10,10) touches nothing                   -> FP
//! image c: regular (0,0,10,20), (100,0,10,20)
//!   0.6 at (0,2,10,20)   iou 180/220 with the first box    -> TP
//! ```
//!
//! Four regular boxes over three images. Sweeping the threshold:
//!
//! | threshold | TP | FP | fppi | miss |
//! |-----------|----|----|------|------|
//! | 0.9       | 1  | 0  | 0    | 3/4  |
//! | 0.8       | 1  | 0  | 0    | 3/4  |
//! | 0.7       | 1  | 1  | 1/3  | 3/4  |
//! | 0.6       | 2  | 1  | 1/3  | 1/2  |
//!
//! Integral over [0, 1]: 3/4 * 1/3 + 1/2 * 2/3 = 7/12.
//! Nine-point mean: seven reference FPPIs lie below 1/3, so
//! (7 * 3/4 + 2 * 1/2) / 9 = 25/36. Miss rate at 1 FPPI: 1/2.

pub const ANNOTATIONS: [(&str, &str); 3] = [
    ("a", "0 0 10 20 0 0\n50 0 10 20 1 0\n"),
    ("b", "0 0 10 20 0 0\n"),
    ("c", "0 0 10 20 0 0\n100 0 10 20 0 0\n"),
];

pub const DETECTIONS_CSV: &str = "image_id,left,top,width,height,score
a,0.000,0.000,10.000,20.000,0.900000
a,51.000,0.000,10.000,20.000,0.800000
b,30.000,30.000,10.000,10.000,0.700000
c,0.000,2.000,10.000,20.000,0.600000
";

/// Labels in file order: `T`rue positive, `F`alse positive, `I`gnored.
pub const LABELS: [(&str, char); 4] = [("a", 'T'), ("a", 'I'), ("b", 'F'), ("c", 'T')];

/// `(fppi, miss, threshold)` in sweep order.
pub const CURVE: [(f64, f64, f64); 4] =
    [(0.0, 0.75, 0.9), (0.0, 0.75, 0.8), (1.0 / 3.0, 0.75, 0.7), (1.0 / 3.0, 0.5, 0.6)];

pub const AUC_CONTINUOUS: f64 = 7.0 / 12.0;
pub const AUC_DISCRETE9: f64 = 25.0 / 36.0;
pub const MISS_AT_1FPPI: f64 = 0.5;

/// Writes `annotations/<id>.txt` and `detections.csv` under `dir`.
pub fn write(dir: &std::path::Path) -> std::io::Result<()> {
    let ann = dir.join("annotations");
    std::fs::create_dir_all(&ann)?;
    for (id, text) in ANNOTATIONS {
        std::fs::write(ann.join(format!("{id}.txt")), text)?;
    }
    std::fs::write(dir.join("detections.csv"), DETECTIONS_CSV)
}
