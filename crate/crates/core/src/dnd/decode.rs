//! Symbol selection, the common decoder interface and streaming decode.

use std::collections::VecDeque;

use super::baseline::GaussianBaseline;
use super::config::DndConfig;
use super::model::{Mode, NeuralDecoder};
use crate::alphabet::CharacterDictionary;
use crate::compute::kernels::argmax;
use crate::compute::{Scalar, Tensor};
use crate::dataset::TouchPoint;
use crate::error::Result;

/// Per-row argmax of `[n x dict]` logits as dictionary indices. Ties go to
/// the lowest index.
pub fn select_indices<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    (0..logits.rows()).map(|r| argmax(logits.row(r))).collect()
}

/// Per-row argmax mapped through the dictionary.
pub fn select<T: Scalar>(logits: &Tensor<T>) -> String {
    CharacterDictionary::standard().decode(&select_indices(logits))
}

/// Anything that turns touches into dictionary indices.
pub trait Decoder: Send + Sync {
    /// Longest input accepted by [`Decoder::decode_window`].
    fn window(&self) -> usize;

    /// Decodes `1..=window` touches.
    fn decode_window(&self, touches: &[TouchPoint]) -> Result<Vec<usize>>;

    /// Decodes any number of touches in consecutive non-overlapping windows.
    fn decode_indices(&self, touches: &[TouchPoint]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(touches.len());
        for chunk in touches.chunks(self.window().max(1)) {
            out.extend(self.decode_window(chunk)?);
        }
        Ok(out)
    }

    fn decode(&self, touches: &[TouchPoint]) -> Result<String> {
        Ok(CharacterDictionary::standard().decode(&self.decode_indices(touches)?))
    }
}

impl<T: Scalar> Decoder for NeuralDecoder<T> {
    fn window(&self) -> usize {
        self.config().window
    }

    fn decode_window(&self, touches: &[TouchPoint]) -> Result<Vec<usize>> {
        let (_, fin) = self.forward(touches, Mode::Inference)?;
        Ok(select_indices(&fin))
    }
}

/// A trained decoder of any variant.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Neural(NeuralDecoder<f32>),
    Gaussian(GaussianBaseline),
}

impl Model {
    pub fn config(&self) -> &DndConfig {
        match self {
            Model::Neural(m) => m.config(),
            Model::Gaussian(g) => &g.config,
        }
    }
}

impl Decoder for Model {
    fn window(&self) -> usize {
        match self {
            Model::Neural(m) => m.window(),
            Model::Gaussian(g) => g.window(),
        }
    }

    fn decode_window(&self, touches: &[TouchPoint]) -> Result<Vec<usize>> {
        match self {
            Model::Neural(m) => m.decode_window(touches),
            Model::Gaussian(g) => g.decode_window(touches),
        }
    }
}

/// Per-session streaming buffer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecodeState {
    window: usize,
    buffer: VecDeque<TouchPoint>,
    decoded: Vec<usize>,
    /// Symbols that left the window, frozen at their last decode.
    committed: Vec<usize>,
}

impl DecodeState {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            ..Self::default()
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn buffer(&self) -> impl ExactSizeIterator<Item = &TouchPoint> {
        self.buffer.iter()
    }

    pub fn buffered(&self) -> Vec<TouchPoint> {
        self.buffer.iter().copied().collect()
    }

    /// Decode of the current window.
    pub fn decoded(&self) -> String {
        CharacterDictionary::standard().decode(&self.decoded)
    }

    /// Committed symbols followed by the current window's decode.
    pub fn text(&self) -> String {
        let dict = CharacterDictionary::standard();
        let mut s = dict.decode(&self.committed);
        s.push_str(&dict.decode(&self.decoded));
        s
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.window);
    }

    /// Appends `p`, evicting the oldest touch when full, and re-decodes the
    /// whole buffer.
    pub fn push<D: Decoder + ?Sized>(&mut self, model: &D, p: TouchPoint) -> Result<String> {
        let window = self.window.min(model.window());
        self.buffer.push_back(p);
        while self.buffer.len() > window {
            self.buffer.pop_front();
            if !self.decoded.is_empty() {
                self.committed.push(self.decoded.remove(0));
            }
        }
        self.buffer.make_contiguous();
        self.decoded = model.decode_window(self.buffer.as_slices().0)?;
        Ok(self.decoded())
    }
}

/// Streams one touch into `state` and returns the re-decoded window.
pub fn decode_stream<D: Decoder + ?Sized>(model: &D, state: &mut DecodeState, p: TouchPoint) -> Result<String> {
    state.push(model, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::CharacterDictionary;

    #[test]
    fn select_rules() {
        let dict = CharacterDictionary::standard();
        let q = dict.index_of('q').unwrap();
        let mut row = vec![0.0f64; 31];
        row[q] = 10.0;
        let t = Tensor::new(vec![1, 31], row.clone()).unwrap();
        assert_eq!(select(&t), "q");
        let shifted = Tensor::new(vec![1, 31], row.iter().map(|v| v + 123.0).collect()).unwrap();
        assert_eq!(select(&shifted), "q");
        let flat = Tensor::<f64>::zeros(&[1, 31]);
        assert_eq!(select(&flat), "a");
        let mut p = t.clone();
        crate::compute::kernels::softmax_in_place(p.data_mut(), 31);
        assert_eq!(select_indices(&p), select_indices(&t));
    }

    #[test]
    fn window_eviction() {
        let m = NeuralDecoder::<f32>::new(&DndConfig { window: 3, units: 8, ..DndConfig::default() }, 0).unwrap();
        let mut s = DecodeState::new(3);
        let pts: Vec<TouchPoint> = (0..4).map(|i| TouchPoint::new(0.1 * i as f64, 0.5)).collect();
        assert_eq!(s.push(&m, pts[0]).unwrap().chars().count(), 1);
        for p in &pts[1..] {
            s.push(&m, *p).unwrap();
        }
        assert_eq!(s.buffered(), pts[1..].to_vec());
        assert_eq!(s.text().chars().count(), 4);
        s.reset();
        assert_eq!(s.buffer().len(), 0);
    }

    #[test]
    fn streaming_matches_batch_decode() {
        let m = NeuralDecoder::<f32>::new(&DndConfig { units: 8, ..DndConfig::default() }, 1).unwrap();
        let mut s = DecodeState::new(64);
        let pts: Vec<TouchPoint> = (0..20)
            .map(|i| TouchPoint::new((i as f64 * 0.37).fract(), (i as f64 * 0.61).fract()))
            .collect();
        for (i, p) in pts.iter().enumerate() {
            let streamed = s.push(&m, *p).unwrap();
            assert_eq!(streamed, m.decode(&pts[..=i]).unwrap());
        }
    }

    #[test]
    fn long_inputs_decode_in_windows() {
        let m = NeuralDecoder::<f32>::new(&DndConfig { window: 4, units: 8, ..DndConfig::default() }, 2).unwrap();
        let pts: Vec<TouchPoint> = (0..10).map(|i| TouchPoint::new(0.05 * i as f64, 0.4)).collect();
        let whole = m.decode_indices(&pts).unwrap();
        assert_eq!(whole.len(), 10);
        let mut pieces = m.decode_window(&pts[..4]).unwrap();
        pieces.extend(m.decode_window(&pts[4..8]).unwrap());
        pieces.extend(m.decode_window(&pts[8..]).unwrap());
        assert_eq!(whole, pieces);
    }
}
