//! Bayer mosaic geometry: sampling, RGGB packing, pattern unification and
//! phase-correct flip augmentation.
//!
//! Everything here is pure index manipulation, so results are bit-exact.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Color filter sites. The discriminant is the sRGB channel index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CfaColor {
    Red = 0,
    Green = 1,
    Blue = 2,
}

/// The 2×2 color filter tiling, named by its top-left, top-right,
/// bottom-left, bottom-right sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BayerPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    pub const ALL: [BayerPattern; 4] = [
        BayerPattern::Rggb,
        BayerPattern::Bggr,
        BayerPattern::Grbg,
        BayerPattern::Gbrg,
    ];

    fn tile(self) -> [[CfaColor; 2]; 2] {
        use CfaColor::*;
        match self {
            BayerPattern::Rggb => [[Red, Green], [Green, Blue]],
            BayerPattern::Bggr => [[Blue, Green], [Green, Red]],
            BayerPattern::Grbg => [[Green, Red], [Blue, Green]],
            BayerPattern::Gbrg => [[Green, Blue], [Red, Green]],
        }
    }

    #[inline]
    pub fn color_at(self, row: usize, col: usize) -> CfaColor {
        self.tile()[row % 2][col % 2]
    }

    /// Position of the red site inside the 2×2 tile, `(row, col)`.
    pub fn red_offset(self) -> (usize, usize) {
        match self {
            BayerPattern::Rggb => (0, 0),
            BayerPattern::Bggr => (1, 1),
            BayerPattern::Grbg => (0, 1),
            BayerPattern::Gbrg => (1, 0),
        }
    }

    /// Pattern seen after mirroring an even-width mosaic left-right.
    pub fn mirrored_horizontal(self) -> Self {
        match self {
            BayerPattern::Rggb => BayerPattern::Grbg,
            BayerPattern::Grbg => BayerPattern::Rggb,
            BayerPattern::Bggr => BayerPattern::Gbrg,
            BayerPattern::Gbrg => BayerPattern::Bggr,
        }
    }

    /// Pattern seen after mirroring an even-height mosaic top-bottom.
    pub fn mirrored_vertical(self) -> Self {
        match self {
            BayerPattern::Rggb => BayerPattern::Gbrg,
            BayerPattern::Gbrg => BayerPattern::Rggb,
            BayerPattern::Bggr => BayerPattern::Grbg,
            BayerPattern::Grbg => BayerPattern::Bggr,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BayerPattern::Rggb => "RGGB",
            BayerPattern::Bggr => "BGGR",
            BayerPattern::Grbg => "GRBG",
            BayerPattern::Gbrg => "GBRG",
        }
    }
}

impl fmt::Display for BayerPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BayerPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(BayerPattern::Rggb),
            "BGGR" => Ok(BayerPattern::Bggr),
            "GRBG" => Ok(BayerPattern::Grbg),
            "GBRG" => Ok(BayerPattern::Gbrg),
            other => Err(Error::Pattern(format!("unknown bayer pattern {other:?}"))),
        }
    }
}

/// A single-channel Bayer mosaic with even dimensions and a pattern tag.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMosaic {
    data: Tensor,
    pattern: BayerPattern,
}

impl RawMosaic {
    pub fn new(data: Tensor, pattern: BayerPattern) -> Result<Self> {
        let (c, h, w) = data.shape();
        if c != 1 {
            return Err(dim_err(format!("a mosaic has one channel, got {c}")));
        }
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(dim_err(format!("mosaic dimensions must be even and nonzero, got {h}x{w}")));
        }
        Ok(RawMosaic { data, pattern })
    }

    /// Ingests an arbitrary-size sensor frame, center-cropping odd
    /// dimensions to even. With a one-pixel excess the floor-centered crop
    /// keeps the top/left origin, so the pattern tag is unchanged.
    pub fn ingest(data: Tensor, pattern: BayerPattern) -> Result<Self> {
        let (_, h, w) = data.shape();
        let (eh, ew) = (h & !1, w & !1);
        if eh == 0 || ew == 0 {
            return Err(dim_err(format!("mosaic {h}x{w} too small")));
        }
        if (eh, ew) == (h, w) {
            return Self::new(data, pattern);
        }
        let (top, left) = ((h - eh) / 2, (w - ew) / 2);
        let cropped = data.crop(top, left, eh, ew)?;
        let pattern = shift_pattern(pattern, top, left);
        Self::new(cropped, pattern)
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }

    pub fn pattern(&self) -> BayerPattern {
        self.pattern
    }

    pub fn height(&self) -> usize {
        self.data.height()
    }

    pub fn width(&self) -> usize {
        self.data.width()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data.at(0, y, x)
    }

    pub fn color_at(&self, y: usize, x: usize) -> CfaColor {
        self.pattern.color_at(y, x)
    }
}

/// Half-resolution 4-channel frame in fixed R, G(red row), G(blue row), B order.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedRaw {
    data: Tensor,
}

impl PackedRaw {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.channels() != 4 {
            return Err(dim_err(format!(
                "packed RAW has 4 channels, got {}",
                data.channels()
            )));
        }
        Ok(PackedRaw { data })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_data(self) -> Tensor {
        self.data
    }
}

/// Pattern tag of the sub-mosaic whose origin sits at `(top, left)`.
fn shift_pattern(p: BayerPattern, top: usize, left: usize) -> BayerPattern {
    let (ry, rx) = p.red_offset();
    let ry = (ry + 2 - top % 2) % 2;
    let rx = (rx + 2 - left % 2) % 2;
    match (ry, rx) {
        (0, 0) => BayerPattern::Rggb,
        (1, 1) => BayerPattern::Bggr,
        (0, 1) => BayerPattern::Grbg,
        _ => BayerPattern::Gbrg,
    }
}

/// Samples one color per site from a 3-channel image.
pub fn mosaic(dem: &Tensor, pattern: BayerPattern) -> Result<RawMosaic> {
    let (c, h, w) = dem.shape();
    if c != 3 {
        return Err(dim_err(format!("mosaicking needs 3 channels, got {c}")));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(dim_err(format!("mosaicking needs even dimensions, got {h}x{w}")));
    }
    let data = Tensor::from_fn(1, h, w, |_, y, x| {
        dem.at(pattern.color_at(y, x) as usize, y, x)
    });
    RawMosaic::new(data, pattern)
}

/// Gradient of [`mosaic`] with respect to its 3-channel input.
pub fn mosaic_backward(d_raw: &Tensor, pattern: BayerPattern) -> Tensor {
    let (_, h, w) = d_raw.shape();
    let mut d = Tensor::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            d.set(pattern.color_at(y, x) as usize, y, x, d_raw.at(0, y, x));
        }
    }
    d
}

/// Shifts the sampling grid so the mosaic starts on a red site.
pub fn unify_pattern(raw: &RawMosaic) -> Result<RawMosaic> {
    unify_pattern_with_origin(raw).map(|(m, _)| m)
}

/// As [`unify_pattern`], also returning the `(top, left)` origin of the
/// retained window in the input's coordinates so aligned companions (an
/// sRGB rendering, a noise residue) can be cropped identically.
pub fn unify_pattern_with_origin(raw: &RawMosaic) -> Result<(RawMosaic, (usize, usize))> {
    let (dy, dx) = raw.pattern.red_offset();
    if (dy, dx) == (0, 0) {
        return Ok((raw.clone(), (0, 0)));
    }
    let (h, w) = (raw.height(), raw.width());
    if (dy == 1 && h <= 2) || (dx == 1 && w <= 2) {
        return Err(dim_err(format!(
            "{h}x{w} {} mosaic is too small to shift to RGGB",
            raw.pattern
        )));
    }
    let nh = (h - dy) & !1;
    let nw = (w - dx) & !1;
    let data = raw.data.crop(dy, dx, nh, nw)?;
    Ok((RawMosaic::new(data, BayerPattern::Rggb)?, (dy, dx)))
}

/// Gathers 2×2 blocks of an RGGB-phase 1-channel tensor into 4 channels.
pub fn pack_tensor(rggb: &Tensor) -> Tensor {
    let (_, h, w) = rggb.shape();
    Tensor::from_fn(4, h / 2, w / 2, |c, y, x| {
        rggb.at(0, 2 * y + c / 2, 2 * x + c % 2)
    })
}

/// Inverse of [`pack_tensor`].
pub fn unpack_tensor(packed: &Tensor) -> Tensor {
    let (_, h, w) = packed.shape();
    Tensor::from_fn(1, 2 * h, 2 * w, |_, y, x| {
        packed.at((y % 2) * 2 + x % 2, y / 2, x / 2)
    })
}

/// Unifies to RGGB, then packs each 2×2 block into one 4-channel pixel.
pub fn pack(raw: &RawMosaic) -> Result<PackedRaw> {
    let unified = unify_pattern(raw)?;
    PackedRaw::new(pack_tensor(&unified.data))
}

pub fn unpack(packed: &PackedRaw) -> RawMosaic {
    RawMosaic {
        data: unpack_tensor(&packed.data),
        pattern: BayerPattern::Rggb,
    }
}

/// Where a flipped-and-unified mosaic came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlipWindow {
    pub horizontal: bool,
    pub vertical: bool,
    /// Origin of the retained window inside the flipped frame.
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl FlipWindow {
    /// Applies the same flips and crop to an aligned companion image.
    pub fn apply(&self, img: &Tensor) -> Result<Tensor> {
        let mut t = img.clone();
        if self.horizontal {
            t = t.flip_horizontal();
        }
        if self.vertical {
            t = t.flip_vertical();
        }
        t.crop(self.top, self.left, self.height, self.width)
    }
}

/// Flips a mosaic and re-phases the result to a valid RGGB mosaic.
pub fn bayer_flip(raw: &RawMosaic, horizontal: bool, vertical: bool) -> Result<RawMosaic> {
    bayer_flip_with_window(raw, horizontal, vertical).map(|(m, _)| m)
}

pub fn bayer_flip_with_window(
    raw: &RawMosaic,
    horizontal: bool,
    vertical: bool,
) -> Result<(RawMosaic, FlipWindow)> {
    let mut data = raw.data.clone();
    let mut pattern = raw.pattern;
    if horizontal {
        data = data.flip_horizontal();
        pattern = pattern.mirrored_horizontal();
    }
    if vertical {
        data = data.flip_vertical();
        pattern = pattern.mirrored_vertical();
    }
    let flipped = RawMosaic::new(data, pattern)?;
    let (out, (top, left)) = unify_pattern_with_origin(&flipped)?;
    let window = FlipWindow {
        horizontal,
        vertical,
        top,
        left,
        height: out.height(),
        width: out.width(),
    };
    Ok((out, window))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(1, h, w, |_, y, x| (y * 100 + x) as f64)
    }

    #[test]
    fn constant_image_selects_channel_per_site() {
        let dem = Tensor::from_fn(3, 4, 4, |c, _, _| [0.2, 0.5, 0.7][c]);
        let m = mosaic(&dem, BayerPattern::Rggb).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expect = match (y % 2, x % 2) {
                    (0, 0) => 0.2,
                    (1, 1) => 0.7,
                    _ => 0.5,
                };
                assert_eq!(m.at(y, x), expect);
            }
        }
    }

    #[test]
    fn zero_image_mosaics_to_zero() {
        let dem = Tensor::zeros(3, 6, 8);
        for p in BayerPattern::ALL {
            assert!(mosaic(&dem, p).unwrap().data().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn odd_dimensions_rejected() {
        assert!(matches!(
            mosaic(&Tensor::zeros(3, 5, 4), BayerPattern::Rggb),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            RawMosaic::new(Tensor::zeros(1, 4, 3), BayerPattern::Rggb),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn unknown_pattern_name_is_a_pattern_error() {
        assert!(matches!("RGBW".parse::<BayerPattern>(), Err(Error::Pattern(_))));
        assert_eq!("gbrg".parse::<BayerPattern>().unwrap(), BayerPattern::Gbrg);
    }

    #[test]
    fn ingest_crops_odd_edges() {
        let m = RawMosaic::ingest(labeled(7, 9), BayerPattern::Grbg).unwrap();
        assert_eq!((m.height(), m.width()), (6, 8));
        assert_eq!(m.pattern(), BayerPattern::Grbg);
        assert_eq!(m.at(0, 0), 0.0);
    }

    #[test]
    fn single_block_packs_in_order() {
        let raw = RawMosaic::new(
            Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            BayerPattern::Rggb,
        )
        .unwrap();
        let p = pack(&raw).unwrap();
        assert_eq!(p.data().shape(), (4, 1, 1));
        assert_eq!(p.data().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_bggr_packs_to_constant() {
        let raw = RawMosaic::new(Tensor::filled(1, 6, 6, 0.3), BayerPattern::Bggr).unwrap();
        let p = pack(&raw).unwrap();
        assert!(p.data().data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn unpack_tile_and_zero() {
        let packed = PackedRaw::new(Tensor::from_fn(4, 2, 3, |c, _, _| (c + 1) as f64)).unwrap();
        let m = unpack(&packed);
        assert_eq!((m.height(), m.width()), (4, 6));
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(m.at(y, x), ((y % 2) * 2 + x % 2 + 1) as f64);
            }
        }
        let z = unpack(&PackedRaw::new(Tensor::zeros(4, 3, 3)).unwrap());
        assert!(z.data().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unify_rggb_is_identity() {
        let raw = RawMosaic::new(labeled(6, 6), BayerPattern::Rggb).unwrap();
        assert_eq!(unify_pattern(&raw).unwrap(), raw);
    }

    #[test]
    fn unify_bggr_shifts_by_one_one() {
        let raw = RawMosaic::new(labeled(6, 6), BayerPattern::Bggr).unwrap();
        let u = unify_pattern(&raw).unwrap();
        assert_eq!(u.pattern(), BayerPattern::Rggb);
        assert_eq!((u.height(), u.width()), (4, 4));
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(u.at(y, x), ((y + 1) * 100 + x + 1) as f64);
            }
        }
    }

    #[test]
    fn unify_grbg_keeps_colors() {
        let raw = RawMosaic::new(labeled(6, 8), BayerPattern::Grbg).unwrap();
        let (u, origin) = unify_pattern_with_origin(&raw).unwrap();
        assert_eq!(origin, (0, 1));
        assert_eq!((u.height(), u.width()), (6, 6));
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(u.at(y, x), raw.at(y, x + 1));
                assert_eq!(u.color_at(y, x), raw.color_at(y, x + 1));
            }
        }
    }

    #[test]
    fn unify_too_small_is_dimension_error() {
        let raw = RawMosaic::new(labeled(2, 6), BayerPattern::Gbrg).unwrap();
        assert!(matches!(unify_pattern(&raw), Err(Error::Dimension(_))));
        // Needs only a column shift, so two rows are fine.
        let raw = RawMosaic::new(labeled(2, 6), BayerPattern::Grbg).unwrap();
        assert!(unify_pattern(&raw).is_ok());
    }

    #[test]
    fn flip_without_flags_is_identity() {
        let raw = RawMosaic::new(labeled(6, 6), BayerPattern::Rggb).unwrap();
        assert_eq!(bayer_flip(&raw, false, false).unwrap(), raw);
    }

    #[test]
    fn double_horizontal_flip_matches_overlap() {
        let raw = RawMosaic::new(labeled(6, 8), BayerPattern::Rggb).unwrap();
        let once = bayer_flip(&raw, true, false).unwrap();
        let twice = bayer_flip(&once, true, false).unwrap();
        assert_eq!(twice.width(), 4);
        // Each flip drops the leading (mirrored) column: original columns 2..6 remain.
        for y in 0..6 {
            for x in 0..4 {
                assert_eq!(twice.at(y, x), raw.at(y, x + 2));
            }
        }
    }

    #[test]
    fn flipped_sites_keep_their_colors() {
        // Value encodes the true color of each source site.
        for p in BayerPattern::ALL {
            let src = Tensor::from_fn(1, 8, 8, |_, y, x| p.color_at(y, x) as usize as f64);
            let raw = RawMosaic::new(src, p).unwrap();
            for (h, v) in [(true, false), (false, true), (true, true)] {
                let f = bayer_flip(&raw, h, v).unwrap();
                assert_eq!(f.pattern(), BayerPattern::Rggb);
                for y in 0..f.height() {
                    for x in 0..f.width() {
                        assert_eq!(f.at(y, x), f.color_at(y, x) as usize as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn translation_by_two_shifts_packing_by_one() {
        let raw = RawMosaic::new(labeled(10, 10), BayerPattern::Rggb).unwrap();
        let shifted = RawMosaic::new(raw.data().crop(2, 2, 8, 8).unwrap(), BayerPattern::Rggb).unwrap();
        let a = pack(&raw).unwrap();
        let b = pack(&shifted).unwrap();
        assert_eq!(b.data(), &a.data().crop(1, 1, 4, 4).unwrap());
    }
}
