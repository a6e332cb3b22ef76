//! Affine warps of a scene window and the Jacobian of the normalized warp.
//!
//! Coordinates are `(x, y)` with `x` along columns and `y` down the rows.
//! Pixel centers sit on integer coordinates. A window of `width × height`
//! pixels is sampled on a grid centered at the origin, so the window center is
//! `u = 0` and the center-fixing constraint only involves the translation
//! parameters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SMatrix};

use crate::error::{Error, Result};

/// Clamp allowance beyond the outermost pixel centers, in pixels.
pub const CLAMP_MARGIN: f64 = 0.5;

/// Dense intensity grid, `height` rows by `width` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pixels: DMatrix<f64>,
}

impl GrayImage {
    pub fn new(pixels: DMatrix<f64>) -> Self {
        Self { pixels }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::new(DMatrix::from_fn(height, width, |y, x| f(x, y)))
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    /// Pixel at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[(y, x)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.pixels
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.pixels
    }

    /// Bilinear sample with coordinates clamped onto the pixel-center grid.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.pixels, x, y)
    }

    /// Scene-wide intensity gradients by central differences (one-sided on
    /// the border), returned as `(∂/∂x, ∂/∂y)`.
    pub fn gradients(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = &self.pixels;
        let (h, w) = p.shape();
        let gx = DMatrix::from_fn(h, w, |r, c| match (c, w) {
            (_, 1) => 0.0,
            (0, _) => p[(r, 1)] - p[(r, 0)],
            (c, w) if c == w - 1 => p[(r, c)] - p[(r, c - 1)],
            (c, _) => 0.5 * (p[(r, c + 1)] - p[(r, c - 1)]),
        });
        let gy = DMatrix::from_fn(h, w, |r, c| match (r, h) {
            (_, 1) => 0.0,
            (0, _) => p[(1, c)] - p[(0, c)],
            (r, h) if r == h - 1 => p[(r, c)] - p[(r - 1, c)],
            (r, _) => 0.5 * (p[(r + 1, c)] - p[(r - 1, c)]),
        });
        (gx, gy)
    }
}

fn bilinear(p: &DMatrix<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = p.shape();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    (1.0 - fx) * (1.0 - fy) * p[(y0, x0)]
        + fx * (1.0 - fy) * p[(y0, x1)]
        + (1.0 - fx) * fy * p[(y1, x0)]
        + fx * fy * p[(y1, x1)]
}

/// Canonical sampling domain: a `width × height` grid whose top-left pixel
/// sits at `(origin_x, origin_y)` in the scene under the identity transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub origin_x: f64,
    pub origin_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Window {
    pub fn new(origin_x: f64, origin_y: f64, width: usize, height: usize) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::DegenerateInput(format!(
                "window must be at least 2x2, got {width}x{height}"
            )));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::NonFinite { what: "window origin" });
        }
        Ok(Self {
            origin_x,
            origin_y,
            width,
            height,
        })
    }

    /// Window centered on `(cx, cy)`.
    pub fn centered(cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            cx - 0.5 * (width as f64 - 1.0),
            cy - 0.5 * (height as f64 - 1.0),
            width,
            height,
        )
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.origin_x + 0.5 * (self.width as f64 - 1.0),
            self.origin_y + 0.5 * (self.height as f64 - 1.0),
        )
    }

    /// Window-centered coordinate of the pixel in column `col`, row `row`.
    pub fn local(&self, col: usize, row: usize) -> (f64, f64) {
        (
            col as f64 - 0.5 * (self.width as f64 - 1.0),
            row as f64 - 0.5 * (self.height as f64 - 1.0),
        )
    }

    fn corners(&self) -> [(&'static str, usize, usize); 4] {
        let (w, h) = (self.width - 1, self.height - 1);
        [
            ("top-left", 0, 0),
            ("top-right", w, 0),
            ("bottom-left", 0, h),
            ("bottom-right", w, h),
        ]
    }
}

/// Affine transform as a deviation from the identity:
/// `u ↦ (I + δA)u + δt` with `p = (δa11, δa12, δa21, δa22, δt1, δt2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineParams(pub [f64; 6]);

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams([0.0; 6]);

    /// Pure rotation by `theta` radians, `I + δA = [[cos θ, sin θ], [−sin θ, cos θ]]`.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self([c - 1.0, s, -s, c - 1.0, 0.0, 0.0])
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self([0.0, 0.0, 0.0, 0.0, tx, ty])
    }

    /// The linear part `I + δA` as `[[a11, a12], [a21, a22]]`.
    pub fn linear(&self) -> [[f64; 2]; 2] {
        let p = &self.0;
        [[1.0 + p[0], p[1]], [p[2], 1.0 + p[3]]]
    }

    pub fn apply(&self, u: (f64, f64)) -> (f64, f64) {
        let [[a, b], [c, d]] = self.linear();
        (a * u.0 + b * u.1 + self.0[4], c * u.0 + d * u.1 + self.0[5])
    }

    /// In-plane rotation angle of the orthogonal factor of the polar
    /// decomposition of `I + δA`, in the convention of [`AffineParams::rotation`].
    pub fn rotation_angle(&self) -> f64 {
        let [[a, b], [c, d]] = self.linear();
        (b - c).atan2(a + d)
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let mut p = [0.0; 6];
        p.copy_from_slice(v.as_slice());
        Self(p)
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

impl std::ops::Add for AffineParams {
    type Output = AffineParams;
    fn add(self, rhs: Self) -> Self {
        let mut p = self.0;
        p.iter_mut().zip(rhs.0).for_each(|(a, b)| *a += b);
        Self(p)
    }
}

fn scene_point(tau: &AffineParams, window: &Window, col: usize, row: usize) -> (f64, f64) {
    let (cx, cy) = window.center();
    let (x, y) = tau.apply(window.local(col, row));
    (x + cx, y + cy)
}

fn check_bounds(scene: &GrayImage, tau: &AffineParams, window: &Window, inset: f64) -> Result<()> {
    let (w, h) = (scene.width() as f64, scene.height() as f64);
    for (name, col, row) in window.corners() {
        let (x, y) = scene_point(tau, window, col, row);
        let inside = x >= inset && x <= w - 1.0 - inset && y >= inset && y <= h - 1.0 - inset;
        if !inside || !x.is_finite() || !y.is_finite() {
            return Err(Error::OutOfBounds {
                corner: name,
                x,
                y,
                width: scene.width(),
                height: scene.height(),
                margin: -inset,
            });
        }
    }
    Ok(())
}

/// Samples `scene ∘ τ` on the window grid.
pub fn warp(scene: &GrayImage, tau: &AffineParams, window: &Window) -> Result<GrayImage> {
    if scene.width() < 2 || scene.height() < 2 {
        return Err(Error::DegenerateInput("scene must be at least 2x2".into()));
    }
    check_bounds(scene, tau, window, -CLAMP_MARGIN)?;
    Ok(GrayImage::from_fn(window.width, window.height, |c, r| {
        let (x, y) = scene_point(tau, window, c, r);
        scene.sample(x, y)
    }))
}

/// Scales to unit Frobenius norm, returning the original norm.
pub fn normalize(image: &GrayImage) -> Result<(GrayImage, f64)> {
    let norm = image.as_matrix().norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite { what: "window intensities" });
    }
    if norm == 0.0 {
        return Err(Error::DegenerateInput(
            "window is all zeros; rectification is undefined".into(),
        ));
    }
    Ok((GrayImage::new(image.as_matrix() / norm), norm))
}

/// Linear constraint pinning the window center, with an orthonormal basis of
/// its null space.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterConstraint {
    /// `A_t`, mapping an increment to the displacement of the window center.
    pub a_t: SMatrix<f64, 2, 6>,
    /// Columns span `null(A_t)`; `A_t · Z = 0`, `Z* Z = I`.
    pub null_basis: DMatrix<f64>,
}

impl CenterConstraint {
    pub fn displacement(&self, p: &AffineParams) -> (f64, f64) {
        let d = self.a_t * nalgebra::SVector::<f64, 6>::from_column_slice(&p.0);
        (d[0], d[1])
    }

    /// Full 6-parameter increment `Zβ` for a reduced increment `β`.
    pub fn expand(&self, beta: &DVector<f64>) -> AffineParams {
        AffineParams::from_vector(&(&self.null_basis * beta))
    }
}

/// With window-centered coordinates the center `u = 0` moves by exactly
/// `(δt1, δt2)`, so `A_t` selects the translation and the null space is the
/// linear part.
pub fn center_constraint(_window: &Window) -> CenterConstraint {
    let mut a_t = SMatrix::<f64, 2, 6>::zeros();
    a_t[(0, 4)] = 1.0;
    a_t[(1, 5)] = 1.0;
    let mut z = DMatrix::zeros(6, 4);
    for k in 0..4 {
        z[(k, k)] = 1.0;
    }
    CenterConstraint { a_t, null_basis: z }
}

/// Linear map from reduced parameter space to window-shaped matrices.
///
/// Matrices are vectorized column by column. The Gram matrix `J*J` is
/// Cholesky-factorized once at construction.
#[derive(Debug, Clone)]
pub struct JacobianOperator {
    basis: DMatrix<f64>,
    rows: usize,
    cols: usize,
    gram: DMatrix<f64>,
    gram_factor: Cholesky<f64, Dyn>,
    ridge: f64,
    null_basis: Option<DMatrix<f64>>,
    image_in_range: bool,
}

impl JacobianOperator {
    /// Wraps an explicit `(rows·cols) × q` basis.
    pub fn from_basis(basis: DMatrix<f64>, rows: usize, cols: usize) -> Result<Self> {
        if basis.nrows() != rows * cols {
            return Err(Error::Dimension(format!(
                "basis has {} rows, window has {} pixels",
                basis.nrows(),
                rows * cols
            )));
        }
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "jacobian" });
        }
        let norm = basis.norm();
        if norm < 1e-10 {
            return Err(Error::DegenerateJacobian { norm });
        }
        let gram = basis.transpose() * &basis;
        let q = gram.nrows();
        let (gram_factor, ridge) = match Cholesky::new(gram.clone()) {
            Some(f) => (f, 0.0),
            None => {
                let ridge = 1e-12 * gram.trace() / q as f64;
                let shifted = &gram + DMatrix::identity(q, q) * ridge;
                (Cholesky::new(shifted).ok_or(Error::GramFactorization)?, ridge)
            }
        };
        Ok(Self {
            basis,
            rows,
            cols,
            gram,
            gram_factor,
            ridge,
            null_basis: None,
            image_in_range: false,
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Ridge added to `J*J` when the plain factorization failed (0 otherwise).
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn null_basis(&self) -> Option<&DMatrix<f64>> {
        self.null_basis.as_ref()
    }

    /// Set when the normalized window was found (numerically) inside `range(J)`,
    /// in which case the linearized problem only admits the zero solution.
    pub fn image_in_range(&self) -> bool {
        self.image_in_range
    }

    /// Reduced parameter count `q`.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// `J·v`, reshaped to the window.
    pub fn apply(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let flat = &self.basis * v;
        DMatrix::from_vec(self.rows, self.cols, flat.data.into())
    }

    /// `J*·M`.
    pub fn adjoint(&self, m: &DMatrix<f64>) -> DVector<f64> {
        let flat = DVector::from_column_slice(m.as_slice());
        self.basis.tr_mul(&flat)
    }

    /// `(J*J)⁻¹ r`.
    pub fn gram_solve(&self, r: &DVector<f64>) -> DVector<f64> {
        self.gram_factor.solve(r)
    }

    /// `J(J*J)⁻¹J*·M`: the orthogonal projector onto `range(J)`, which is the
    /// semi-proximal operator acting on the sparse block.
    pub fn range_projection(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply(&self.gram_solve(&self.adjoint(m)))
    }
}

/// Jacobian of `vec(D∘ζ)/‖vec(D∘ζ)‖₂` at `ζ = τ` along the columns of
/// `null_basis` (6×q).
///
/// The raw derivative combines central-difference scene gradients, sampled
/// bilinearly at the warped grid, with the affine coordinate derivative; the
/// normalization is then differentiated by the quotient rule
/// `(I − v̂v̂*)/‖v‖`.
pub fn jacobian(
    scene: &GrayImage,
    tau: &AffineParams,
    window: &Window,
    null_basis: &DMatrix<f64>,
) -> Result<JacobianOperator> {
    if null_basis.nrows() != 6 {
        return Err(Error::Dimension(format!(
            "null basis must have 6 rows, got {}",
            null_basis.nrows()
        )));
    }
    check_bounds(scene, tau, window, 1.0)?;
    let (rows, cols) = (window.height, window.width);
    let pixels = rows * cols;

    let (gx, gy) = scene.gradients();
    let mut raw = DMatrix::zeros(pixels, 6);
    let mut v = DVector::zeros(pixels);
    for c in 0..cols {
        for r in 0..rows {
            let i = c * rows + r;
            let (ux, uy) = window.local(c, r);
            let (x, y) = scene_point(tau, window, c, r);
            let ix = bilinear(&gx, x, y);
            let iy = bilinear(&gy, x, y);
            v[i] = scene.sample(x, y);
            raw[(i, 0)] = ix * ux;
            raw[(i, 1)] = ix * uy;
            raw[(i, 2)] = iy * ux;
            raw[(i, 3)] = iy * uy;
            raw[(i, 4)] = ix;
            raw[(i, 5)] = iy;
        }
    }
    let vnorm = v.norm();
    if vnorm == 0.0 {
        return Err(Error::DegenerateInput(
            "window is all zeros; rectification is undefined".into(),
        ));
    }
    let vhat = &v / vnorm;
    let reduced = raw * null_basis;
    // (I − v̂v̂*)·reduced / ‖v‖
    let along = vhat.tr_mul(&reduced);
    let mut basis = reduced;
    basis.ger(-1.0, &vhat, &along.transpose(), 1.0);
    basis /= vnorm;

    let mut op = JacobianOperator::from_basis(basis, rows, cols)?;
    op.null_basis = Some(null_basis.clone());

    let d = DMatrix::from_vec(rows, cols, vhat.data.into());
    let off_range = (&d - op.range_projection(&d)).norm();
    if off_range < 1e-8 {
        log::warn!(
            "normalized window lies in range(J) (distance {off_range:e}); the linearized problem only admits zero solutions"
        );
        op.image_in_range = true;
    }
    Ok(op)
}
