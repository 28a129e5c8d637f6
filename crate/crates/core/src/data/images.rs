use std::fs;
use std::path::Path;

use super::{DataError, Subset};
use crate::nn::Tensor;

/// Square grayscale images with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    side: usize,
    images: Vec<Vec<f64>>,
    labels: Vec<usize>,
    names: Vec<String>,
}

impl ImageDataset {
    pub fn new(side: usize, images: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self, DataError> {
        let names = (0..images.len()).map(|i| format!("img_{i:05}.pgm")).collect();
        Self::with_names(side, images, labels, names)
    }

    pub fn with_names(side: usize, images: Vec<Vec<f64>>, labels: Vec<usize>, names: Vec<String>) -> Result<Self, DataError> {
        if images.len() != labels.len() || images.len() != names.len() {
            return Err(DataError::Invalid("images, labels and names differ in length".into()));
        }
        for (img, name) in images.iter().zip(&names) {
            if img.len() != side * side {
                return Err(DataError::Invalid(format!("{name}: expected {side}x{side} pixels")));
            }
            if img.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(DataError::Invalid(format!("{name}: pixel outside [0, 1]")));
            }
        }
        Ok(ImageDataset { side, images, labels, names })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn images(&self) -> &[Vec<f64>] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `(1, side, side)` tensor of one image.
    pub fn image_tensor(&self, i: usize) -> Tensor {
        Tensor::new(vec![1, self.side, self.side], self.images[i].clone()).expect("validated size")
    }

    /// `(N, 1, side, side)` batch of the selected images.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.side * self.side);
        for &i in indices {
            data.extend_from_slice(&self.images[i]);
        }
        Tensor::new(vec![indices.len(), 1, self.side, self.side], data).expect("validated size")
    }

    pub fn all(&self) -> Tensor {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}

impl Subset for ImageDataset {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn subset(&self, indices: &[usize]) -> Self {
        ImageDataset {
            side: self.side,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            names: indices.iter().map(|&i| self.names[i].clone()).collect(),
        }
    }
}

/// Raw binary PGM contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Parse a binary (P5) PGM with maxval 255. Comments are allowed in the
/// header.
pub fn parse_pgm(bytes: &[u8], file: &str) -> Result<Pgm, DataError> {
    let err = |message: &str| DataError::Pgm { file: file.to_string(), message: message.to_string() };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err("not a binary PGM (magic must be P5)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(err("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err("malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| err("header value out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(err(&format!("unsupported maxval {maxval} (only 255)")));
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(err("missing whitespace after header")),
    }
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(err("truncated pixel data"));
    }
    Ok(Pgm { width, height, pixels: bytes[pos..pos + n].to_vec() })
}

pub fn encode_pgm(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", pgm.width, pgm.height).into_bytes();
    out.extend_from_slice(&pgm.pixels);
    out
}

/// Quantize a `[0, 1]` image to 8 bits.
pub fn to_bytes(pixels: &[f64]) -> Vec<u8> {
    pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<(), DataError> {
    let pgm = Pgm { width, height, pixels: to_bytes(pixels) };
    fs::write(path, encode_pgm(&pgm)).map_err(|e| DataError::io(path, e))
}

/// Load the images listed in `labels_csv` (columns `filename,label`) from
/// `dir`, in listing order.
pub fn load_pgm(dir: &Path, labels_csv: &Path) -> Result<ImageDataset, DataError> {
    let text = fs::read_to_string(labels_csv).map_err(|e| DataError::io(labels_csv, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    let mut side: Option<(usize, usize)> = None;
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| DataError::Csv(e.to_string()))?;
        let (name, label) = match (row.get(0), row.get(1)) {
            (Some(n), Some(l)) => (n.trim().to_string(), l.trim()),
            _ => return Err(DataError::Csv(format!("row {}: expected filename,label", i + 1))),
        };
        let label: usize = label
            .parse()
            .map_err(|_| DataError::Csv(format!("row {}: label '{label}' is not a class index", i + 1)))?;
        let path = dir.join(&name);
        let bytes = fs::read(&path).map_err(|e| DataError::io(&path, e))?;
        let pgm = parse_pgm(&bytes, &name)?;
        match side {
            None => side = Some((pgm.width, pgm.height)),
            Some(dims) if dims != (pgm.width, pgm.height) => {
                return Err(DataError::DimensionMismatch {
                    file: name,
                    expected: dims,
                    actual: (pgm.width, pgm.height),
                });
            }
            _ => {}
        }
        images.push(pgm.pixels.iter().map(|&b| b as f64 / 255.0).collect());
        labels.push(label);
        names.push(name);
    }
    let (w, h) = side.unwrap_or((0, 0));
    if w != h {
        return Err(DataError::Invalid(format!("images must be square, got {w}x{h}")));
    }
    ImageDataset::with_names(w, images, labels, names)
}

/// Write every image as a PGM plus a `labels.csv` index into `dir`.
pub fn write_pgm_dataset(dataset: &ImageDataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut index = String::from("filename,label\n");
    for ((img, &label), name) in dataset.images().iter().zip(dataset.labels()).zip(dataset.names()) {
        write_pgm(&dir.join(name), dataset.side(), dataset.side(), img)?;
        index.push_str(&format!("{name},{label}\n"));
    }
    let path = dir.join("labels.csv");
    fs::write(&path, index).map_err(|e| DataError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm_bytes(w: usize, h: usize, maxval: u32, px: &[u8]) -> Vec<u8> {
        let mut b = format!("P5\n# comment\n{w} {h}\n{maxval}\n").into_bytes();
        b.extend_from_slice(px);
        b
    }

    #[test]
    fn scales_by_255() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.pgm"), pgm_bytes(2, 2, 255, &[0, 255, 128, 64])).unwrap();
        fs::write(dir.path().join("labels.csv"), "filename,label\na.pgm,1\n").unwrap();
        let ds = load_pgm(dir.path(), &dir.path().join("labels.csv")).unwrap();
        assert_eq!(ds.images()[0], vec![0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(ds.labels(), &[1]);
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.pgm"), pgm_bytes(2, 2, 255, &[0; 4])).unwrap();
        fs::write(dir.path().join("b.pgm"), pgm_bytes(3, 3, 255, &[0; 9])).unwrap();
        fs::write(dir.path().join("labels.csv"), "filename,label\na.pgm,0\nb.pgm,1\n").unwrap();
        let err = load_pgm(dir.path(), &dir.path().join("labels.csv")).unwrap_err();
        assert!(matches!(err, DataError::DimensionMismatch { ref file, .. } if file == "b.pgm"), "{err}");
    }

    #[test]
    fn unsupported_headers_name_the_file() {
        let err = parse_pgm(&pgm_bytes(2, 2, 65535, &[0; 8]), "deep.pgm").unwrap_err();
        assert!(err.to_string().contains("deep.pgm") && err.to_string().contains("maxval"));
        let err = parse_pgm(b"P2\n2 2\n255\n0 0 0 0", "ascii.pgm").unwrap_err();
        assert!(err.to_string().contains("ascii.pgm"));
        assert!(parse_pgm(&pgm_bytes(2, 2, 255, &[0; 3]), "short.pgm").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let px: Vec<Vec<f64>> = (0..3).map(|k| (0..16).map(|i| ((i * 13 + k * 7) % 256) as f64 / 255.0).collect()).collect();
        let ds = ImageDataset::new(4, px, vec![0, 1, 0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_pgm_dataset(&ds, dir.path()).unwrap();
        let back = load_pgm(dir.path(), &dir.path().join("labels.csv")).unwrap();
        assert_eq!(back, ds);
    }
}
