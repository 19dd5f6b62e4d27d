//! Textures: the attack's sole decision variable. RGB grids in [0,1],
//! stored losslessly as 8-bit PNG, plus deterministic procedural patterns
//! for the desk corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::str::FromStr;

/// Textures smaller than this are useless for bilinear sampling.
pub const MIN_TEXTURE_DIM: u32 = 4;

/// Side length of generated pattern textures.
pub const PATTERN_SIZE: u32 = 64;

#[derive(Debug, thiserror::Error)]
pub enum TextureError {
    #[error("texture dimensions {width}x{height} below minimum {MIN_TEXTURE_DIM}")]
    TooSmall { width: u32, height: u32 },
    #[error("texture data length {got} does not match {width}x{height}x3 = {want}")]
    DataLength { width: u32, height: u32, got: usize, want: usize },
    #[error("texture component {value} at index {index} outside [0,1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("bad pattern spec {spec:?}: {reason}")]
    BadPatternSpec { spec: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// H x W x 3 color grid, row-major, components in [0,1]. Values that came
/// from or will go to disk sit exactly on the 8-bit grid (k/255), which
/// makes save/load a bitwise round trip.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Texture {
    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Result<Self, TextureError> {
        if width < MIN_TEXTURE_DIM || height < MIN_TEXTURE_DIM {
            return Err(TextureError::TooSmall { width, height });
        }
        let want = (width as usize) * (height as usize) * 3;
        if data.len() != want {
            return Err(TextureError::DataLength { width, height, got: data.len(), want });
        }
        if let Some((index, &value)) =
            data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(TextureError::OutOfRange { index, value });
        }
        Ok(Texture { width, height, data })
    }

    pub fn constant(width: u32, height: u32, rgb: [f64; 3]) -> Result<Self, TextureError> {
        let mut data = Vec::with_capacity((width as usize) * (height as usize) * 3);
        for _ in 0..(width as usize) * (height as usize) {
            data.extend_from_slice(&rgb);
        }
        Texture::from_data(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Number of scalar components (W*H*3) — the denominator of the
    /// perturbation-size metric.
    pub fn component_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for the attack loop. Callers are responsible for
    /// keeping components inside [0,1]; the PGD projection guarantees it.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn texel_index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        ((y * self.width + x) as usize) * 3
    }

    #[inline]
    pub fn texel(&self, x: u32, y: u32) -> [f64; 3] {
        let i = self.texel_index(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_texel(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let i = self.texel_index(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// See [`bilinear_footprint`].
    pub fn bilinear_footprint(&self, u: f64, v: f64) -> ([u32; 4], [f64; 4]) {
        bilinear_footprint(self.width, self.height, u, v)
    }

    pub fn load_png(path: &Path) -> Result<Self, TextureError> {
        let img = image::ImageReader::open(path)?.decode()?.into_rgb8();
        let (width, height) = img.dimensions();
        let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        Texture::from_data(width, height, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), TextureError> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = image::RgbImage::from_raw(self.width, self.height, bytes)
            .expect("dimensions match by construction");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// The four texel indices and bilinear weights for a UV coordinate on a
/// width x height grid, clamp-to-edge. Returned indices are component
/// offsets (the texel's R channel) into the flat W*H*3 data. Weights are
/// nonnegative and sum to 1; at an edge the clamped entries repeat a texel
/// index, which accumulates correctly in both sampling and gradient
/// splatting.
pub fn bilinear_footprint(width: u32, height: u32, u: f64, v: f64) -> ([u32; 4], [f64; 4]) {
    let x = u * width as f64 - 0.5;
    // v=0 is the bottom of the texture; image row 0 is the top.
    let y = (1.0 - v) * height as f64 - 0.5;
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let clamp_x = |c: f64| (c.max(0.0) as u32).min(width - 1);
    let clamp_y = |c: f64| (c.max(0.0) as u32).min(height - 1);
    let x0 = clamp_x(x0f);
    let x1 = clamp_x(x0f + 1.0);
    let y0 = clamp_y(y0f);
    let y1 = clamp_y(y0f + 1.0);
    let texels = [
        (y0 * width + x0) * 3,
        (y0 * width + x1) * 3,
        (y1 * width + x0) * 3,
        (y1 * width + x1) * 3,
    ];
    let weights = [
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    ];
    (texels, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Checker,
    Stripes,
    Noise,
}

/// Procedural texture recipe, parsed from strings like `checker-8`,
/// `stripes-4:FF8800/222222`, or `noise-6@13`. The trailing palette is a
/// pair of hex colors; `@seed` feeds the noise generator.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSpec {
    pub kind: PatternKind,
    pub cells: u32,
    pub seed: u64,
    pub palette: [[f64; 3]; 2],
    pub size: u32,
}

fn parse_hex_color(s: &str, spec: &str) -> Result<[f64; 3], TextureError> {
    let bad = |reason: &str| TextureError::BadPatternSpec {
        spec: spec.to_string(),
        reason: reason.to_string(),
    };
    if s.len() != 6 {
        return Err(bad("palette color must be 6 hex digits"));
    }
    let mut rgb = [0.0; 3];
    for (i, chunk) in [&s[0..2], &s[2..4], &s[4..6]].iter().enumerate() {
        let byte = u8::from_str_radix(chunk, 16)
            .map_err(|_| bad("palette color must be 6 hex digits"))?;
        rgb[i] = byte as f64 / 255.0;
    }
    Ok(rgb)
}

impl FromStr for PatternSpec {
    type Err = TextureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |reason: &str| TextureError::BadPatternSpec {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let (pattern, palette_str) = match s.split_once(':') {
            Some((p, pal)) => (p, Some(pal)),
            None => (s, None),
        };
        let (base, seed_str) = match pattern.split_once('@') {
            Some((b, sd)) => (b, Some(sd)),
            None => (pattern, None),
        };
        let (kind_str, cells_str) =
            base.split_once('-').ok_or_else(|| bad("expected <kind>-<cells>"))?;
        let kind = match kind_str {
            "checker" => PatternKind::Checker,
            "stripes" => PatternKind::Stripes,
            "noise" => PatternKind::Noise,
            _ => return Err(bad("kind must be checker, stripes, or noise")),
        };
        let cells: u32 = cells_str.parse().map_err(|_| bad("cell count must be an integer"))?;
        if cells == 0 || cells > PATTERN_SIZE {
            return Err(bad("cell count must be in 1..=texture size"));
        }
        let seed = match seed_str {
            Some(sd) => sd.parse().map_err(|_| bad("seed must be an integer"))?,
            None => 0,
        };
        let palette = match palette_str {
            Some(pal) => {
                let (a, b) = pal.split_once('/').ok_or_else(|| bad("palette needs two colors"))?;
                [parse_hex_color(a, s)?, parse_hex_color(b, s)?]
            }
            None => [parse_hex_color("cccccc", s)?, parse_hex_color("333333", s)?],
        };
        Ok(PatternSpec { kind, cells, seed, palette, size: PATTERN_SIZE })
    }
}

impl PatternSpec {
    /// Renders the pattern. Every output component lies exactly on the
    /// 8-bit grid, so disk round trips are lossless.
    pub fn generate(&self) -> Texture {
        let n = self.size as usize;
        let mut data = vec![0.0; n * n * 3];
        let cell_of = |coord: usize| coord * self.cells as usize / n;
        match self.kind {
            PatternKind::Checker => {
                for y in 0..n {
                    for x in 0..n {
                        let c = &self.palette[(cell_of(x) + cell_of(y)) % 2];
                        data[(y * n + x) * 3..(y * n + x) * 3 + 3].copy_from_slice(c);
                    }
                }
            }
            PatternKind::Stripes => {
                for y in 0..n {
                    for x in 0..n {
                        let c = &self.palette[cell_of(x) % 2];
                        data[(y * n + x) * 3..(y * n + x) * 3 + 3].copy_from_slice(c);
                    }
                }
            }
            PatternKind::Noise => {
                let cells = self.cells as usize;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut cell_colors = Vec::with_capacity(cells * cells);
                for _ in 0..cells * cells {
                    let t: f64 = rng.gen();
                    let mut c = [0.0; 3];
                    for k in 0..3 {
                        let v = self.palette[0][k] * (1.0 - t) + self.palette[1][k] * t;
                        c[k] = (v * 255.0).round() / 255.0;
                    }
                    cell_colors.push(c);
                }
                for y in 0..n {
                    for x in 0..n {
                        let c = &cell_colors[cell_of(y) * cells + cell_of(x)];
                        data[(y * n + x) * 3..(y * n + x) * 3 + 3].copy_from_slice(c);
                    }
                }
            }
        }
        Texture::from_data(self.size, self.size, data).expect("pattern respects invariants")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_spec_grammar() {
        let spec: PatternSpec = "noise-6@13:FF8800/222222".parse().unwrap();
        assert_eq!(spec.kind, PatternKind::Noise);
        assert_eq!(spec.cells, 6);
        assert_eq!(spec.seed, 13);
        assert_eq!(spec.palette[0], [1.0, 136.0 / 255.0, 0.0]);
        assert_eq!(spec.palette[1], [34.0 / 255.0; 3]);
    }

    #[test]
    fn rejects_malformed_specs() {
        for bad in ["checker", "plaid-4", "checker-0", "checker-4:FF00", "noise-4@x"] {
            assert!(bad.parse::<PatternSpec>().is_err(), "{bad:?} should not parse");
        }
    }

    #[test]
    fn checker_cells_alternate() {
        let spec: PatternSpec = "checker-8:FFFFFF/000000".parse().unwrap();
        let tex = spec.generate();
        // 64/8 = 8-texel cells: (0,0) white, (8,0) black, (8,8) white.
        assert_eq!(tex.texel(0, 0), [1.0, 1.0, 1.0]);
        assert_eq!(tex.texel(8, 0), [0.0, 0.0, 0.0]);
        assert_eq!(tex.texel(8, 8), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn stripes_vary_horizontally_only() {
        let spec: PatternSpec = "stripes-4".parse().unwrap();
        let tex = spec.generate();
        for y in 1..tex.height() {
            for x in 0..tex.width() {
                assert_eq!(tex.texel(x, y), tex.texel(x, 0));
            }
        }
        assert_ne!(tex.texel(0, 0), tex.texel(16, 0));
    }

    #[test]
    fn noise_depends_on_seed() {
        let a = "noise-8@1".parse::<PatternSpec>().unwrap().generate();
        let b = "noise-8@1".parse::<PatternSpec>().unwrap().generate();
        let c = "noise-8@2".parse::<PatternSpec>().unwrap().generate();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn generated_values_sit_on_byte_grid() {
        for s in ["checker-8", "stripes-5:12AB77/0340FF", "noise-7@42"] {
            let tex = s.parse::<PatternSpec>().unwrap().generate();
            for &v in tex.data() {
                let byte = v * 255.0;
                assert!(
                    (byte - byte.round()).abs() < 1e-9,
                    "{s}: component {v} off the 8-bit grid"
                );
            }
        }
    }

    #[test]
    fn png_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let tex = "noise-9@5:AA5500/004488".parse::<PatternSpec>().unwrap().generate();
        tex.save_png(&path).unwrap();
        let back = Texture::load_png(&path).unwrap();
        assert_eq!(tex.width(), back.width());
        assert_eq!(tex.height(), back.height());
        assert_eq!(tex.data(), back.data());
    }

    #[test]
    fn rejects_tiny_and_misshapen_textures() {
        assert!(matches!(
            Texture::from_data(2, 8, vec![0.0; 2 * 8 * 3]),
            Err(TextureError::TooSmall { .. })
        ));
        assert!(matches!(
            Texture::from_data(8, 8, vec![0.0; 7]),
            Err(TextureError::DataLength { .. })
        ));
        let mut data = vec![0.5; 8 * 8 * 3];
        data[10] = 1.5;
        assert!(matches!(
            Texture::from_data(8, 8, data),
            Err(TextureError::OutOfRange { index: 10, .. })
        ));
    }

    #[test]
    fn footprint_weights_sum_to_one_and_clamp() {
        let tex = Texture::constant(8, 8, [0.5, 0.5, 0.5]).unwrap();
        for &(u, v) in &[(0.0, 0.0), (1.0, 1.0), (0.5, 0.5), (0.013, 0.97), (0.999, 0.001)] {
            let (texels, weights) = tex.bilinear_footprint(u, v);
            let sum: f64 = weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (&t, &w) in texels.iter().zip(&weights) {
                assert!(w >= 0.0);
                assert!(t < 8 * 8 * 3);
                assert_eq!(t % 3, 0);
            }
        }
        // Texel centers sample exactly one texel.
        let (texels, weights) = tex.bilinear_footprint(
            (3.0 + 0.5) / 8.0,
            1.0 - (2.0 + 0.5) / 8.0,
        );
        assert_eq!(weights[0], 1.0);
        assert_eq!(texels[0], (2 * 8 + 3) * 3);
    }
}
