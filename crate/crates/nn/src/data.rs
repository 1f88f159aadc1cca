use crate::tensor::Tensor;

/// Images stored as 8-bit pixels, exposed as values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pixels: Vec<u8>,
    /// Per-sample `[C, H, W]`.
    shape: [usize; 3],
    labels: Vec<u8>,
    /// sha256 of the source files, when loaded from disk
    pub checksum: Option<String>,
}

impl DatasetSplit {
    /// `None` unless `pixels` holds exactly one `shape` image per label.
    pub fn new(pixels: Vec<u8>, shape: [usize; 3], labels: Vec<u8>) -> Option<Self> {
        let per: usize = shape.iter().product();
        (per > 0 && pixels.len() == per * labels.len()).then_some(DatasetSplit {
            pixels,
            shape,
            labels,
            checksum: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self, i: usize) -> &[u8] {
        let n = self.sample_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// `[len(indices), C, H, W]` tensor of the chosen samples.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend(self.pixels(i).iter().map(|&p| p as f64 / 255.0));
        }
        let [c, h, w] = self.shape;
        Tensor {
            data,
            shape: vec![indices.len(), c, h, w],
        }
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i] as usize).collect()
    }

    /// First `n` samples (all of them if fewer).
    pub fn head(&self, n: usize) -> DatasetSplit {
        let n = n.min(self.len());
        DatasetSplit {
            pixels: self.pixels[..n * self.sample_len()].to_vec(),
            shape: self.shape,
            labels: self.labels[..n].to_vec(),
            checksum: None,
        }
    }
}
