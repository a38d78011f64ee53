//! Space-time coefficient fields and the noise non-linearity.

use std::fmt;
use std::sync::Arc;

use crate::error::Result;
use crate::expr::{Expr, Var};

pub type Point = [f64; 2];

/// Step used by the central-difference fallback for derivatives.
pub const FD_STEP: f64 = 1e-6;

pub trait ScalarField: Send + Sync {
    fn value(&self, p: Point, t: f64) -> f64;

    fn gradient(&self, p: Point, t: f64) -> [f64; 2] {
        let h = FD_STEP;
        [
            (self.value([p[0] + h, p[1]], t) - self.value([p[0] - h, p[1]], t)) / (2.0 * h),
            (self.value([p[0], p[1] + h], t) - self.value([p[0], p[1] - h], t)) / (2.0 * h),
        ]
    }

    fn time_derivative(&self, p: Point, t: f64) -> f64 {
        let h = FD_STEP;
        (self.value(p, t + h) - self.value(p, t - h)) / (2.0 * h)
    }

    /// Whether `gradient` is exact rather than a finite difference.
    fn exact_gradient(&self) -> bool {
        false
    }

    fn is_time_independent(&self) -> bool {
        false
    }

    fn is_zero(&self) -> bool {
        false
    }

    fn describe(&self) -> String {
        "<closure>".to_string()
    }
}

pub type Field = Arc<dyn ScalarField>;

impl fmt::Debug for dyn ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl ScalarField for Constant {
    fn value(&self, _p: Point, _t: f64) -> f64 {
        self.0
    }
    fn gradient(&self, _p: Point, _t: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
    fn time_derivative(&self, _p: Point, _t: f64) -> f64 {
        0.0
    }
    fn exact_gradient(&self) -> bool {
        true
    }
    fn is_time_independent(&self) -> bool {
        true
    }
    fn is_zero(&self) -> bool {
        self.0 == 0.0
    }
    fn describe(&self) -> String {
        format!("{}", self.0)
    }
}

/// A field given by a parsed expression with symbolic derivatives where
/// available.
#[derive(Debug, Clone)]
pub struct ExprField {
    expr: Expr,
    dx: Option<Expr>,
    dy: Option<Expr>,
    dt: Option<Expr>,
}

impl ExprField {
    pub fn new(expr: Expr) -> Self {
        Self {
            dx: expr.derivative(Var::X),
            dy: expr.derivative(Var::Y),
            dt: expr.derivative(Var::T),
            expr,
        }
    }

    pub fn parse(src: &str) -> Result<Self> {
        Ok(Self::new(Expr::parse(src)?))
    }
}

impl ScalarField for ExprField {
    fn value(&self, p: Point, t: f64) -> f64 {
        self.expr.eval(p[0], p[1], t)
    }

    fn gradient(&self, p: Point, t: f64) -> [f64; 2] {
        let h = FD_STEP;
        let gx = match &self.dx {
            Some(d) => d.eval(p[0], p[1], t),
            None => (self.value([p[0] + h, p[1]], t) - self.value([p[0] - h, p[1]], t)) / (2.0 * h),
        };
        let gy = match &self.dy {
            Some(d) => d.eval(p[0], p[1], t),
            None => (self.value([p[0], p[1] + h], t) - self.value([p[0], p[1] - h], t)) / (2.0 * h),
        };
        [gx, gy]
    }

    fn time_derivative(&self, p: Point, t: f64) -> f64 {
        match &self.dt {
            Some(d) => d.eval(p[0], p[1], t),
            None => (self.value(p, t + FD_STEP) - self.value(p, t - FD_STEP)) / (2.0 * FD_STEP),
        }
    }

    fn exact_gradient(&self) -> bool {
        self.dx.is_some() && self.dy.is_some()
    }

    fn is_time_independent(&self) -> bool {
        self.expr.independent_of(Var::T)
    }

    fn is_zero(&self) -> bool {
        matches!(self.expr, Expr::Num(v) if v == 0.0)
    }

    fn describe(&self) -> String {
        self.expr.to_string()
    }
}

type GradFn = Box<dyn Fn(Point, f64) -> [f64; 2] + Send + Sync>;

/// Closure-backed field; derivatives by central differences unless supplied.
pub struct FnField<F> {
    f: F,
    grad: Option<GradFn>,
    time_independent: bool,
}

impl<F> ScalarField for FnField<F>
where
    F: Fn(Point, f64) -> f64 + Send + Sync,
{
    fn value(&self, p: Point, t: f64) -> f64 {
        (self.f)(p, t)
    }

    fn gradient(&self, p: Point, t: f64) -> [f64; 2] {
        match &self.grad {
            Some(g) => g(p, t),
            None => {
                let h = FD_STEP;
                [
                    (self.value([p[0] + h, p[1]], t) - self.value([p[0] - h, p[1]], t)) / (2.0 * h),
                    (self.value([p[0], p[1] + h], t) - self.value([p[0], p[1] - h], t)) / (2.0 * h),
                ]
            }
        }
    }

    fn exact_gradient(&self) -> bool {
        self.grad.is_some()
    }

    fn is_time_independent(&self) -> bool {
        self.time_independent
    }
}

pub fn constant(c: f64) -> Field {
    Arc::new(Constant(c))
}

pub fn zero() -> Field {
    constant(0.0)
}

pub fn from_expr(src: &str) -> Result<Field> {
    Ok(Arc::new(ExprField::parse(src)?))
}

pub fn from_fn<F>(f: F) -> Field
where
    F: Fn(Point, f64) -> f64 + Send + Sync + 'static,
{
    Arc::new(FnField {
        f,
        grad: None,
        time_independent: false,
    })
}

/// Closure field known not to depend on time.
pub fn from_fn_static<F>(f: F) -> Field
where
    F: Fn(Point, f64) -> f64 + Send + Sync + 'static,
{
    Arc::new(FnField {
        f,
        grad: None,
        time_independent: true,
    })
}

pub fn from_fn_with_gradient<F, G>(f: F, grad: G) -> Field
where
    F: Fn(Point, f64) -> f64 + Send + Sync + 'static,
    G: Fn(Point, f64) -> [f64; 2] + Send + Sync + 'static,
{
    Arc::new(FnField {
        f,
        grad: Some(Box::new(grad)),
        time_independent: false,
    })
}

/// Two-component convection field.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub x: Field,
    pub y: Field,
}

impl VectorField {
    pub fn new(x: Field, y: Field) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self::new(zero(), zero())
    }

    pub fn constant(ax: f64, ay: f64) -> Self {
        Self::new(constant(ax), constant(ay))
    }

    pub fn value(&self, p: Point, t: f64) -> [f64; 2] {
        [self.x.value(p, t), self.y.value(p, t)]
    }

    /// Rows are components, columns are spatial directions.
    pub fn jacobian(&self, p: Point, t: f64) -> [[f64; 2]; 2] {
        [self.x.gradient(p, t), self.y.gradient(p, t)]
    }

    pub fn divergence(&self, p: Point, t: f64) -> f64 {
        self.x.gradient(p, t)[0] + self.y.gradient(p, t)[1]
    }

    pub fn exact_derivatives(&self) -> bool {
        self.x.exact_gradient() && self.y.exact_gradient()
    }

    pub fn is_time_independent(&self) -> bool {
        self.x.is_time_independent() && self.y.is_time_independent()
    }

    pub fn is_zero(&self) -> bool {
        self.x.is_zero() && self.y.is_zero()
    }
}

/// The Lipschitz noise non-linearity.
#[derive(Clone)]
pub enum Phi {
    /// `1 + |s|`, Lipschitz constant 1.
    OnePlusAbs,
    /// `sqrt(1 + s^2)`, Lipschitz constant 1.
    SqrtOnePlusSq,
    Constant(f64),
    Affine { slope: f64, offset: f64 },
    Custom {
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        lipschitz: f64,
    },
}

impl fmt::Debug for Phi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phi::OnePlusAbs => f.write_str("one_plus_abs"),
            Phi::SqrtOnePlusSq => f.write_str("sqrt_one_plus_sq"),
            Phi::Constant(c) => write!(f, "constant({c})"),
            Phi::Affine { slope, offset } => write!(f, "affine({slope}, {offset})"),
            Phi::Custom { lipschitz, .. } => write!(f, "custom(L={lipschitz})"),
        }
    }
}

impl Phi {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Phi::OnePlusAbs => 1.0 + s.abs(),
            Phi::SqrtOnePlusSq => (1.0 + s * s).sqrt(),
            Phi::Constant(c) => *c,
            Phi::Affine { slope, offset } => slope * s + offset,
            Phi::Custom { f, .. } => f(s),
        }
    }

    /// The Lipschitz constant the non-linearity is known to satisfy.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Phi::OnePlusAbs | Phi::SqrtOnePlusSq => 1.0,
            Phi::Constant(_) => 0.0,
            Phi::Affine { slope, .. } => slope.abs(),
            Phi::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Phi::Constant(_))
    }

    pub fn parse(name: &str) -> Option<Phi> {
        match name {
            "one_plus_abs" => Some(Phi::OnePlusAbs),
            "sqrt_one_plus_sq" => Some(Phi::SqrtOnePlusSq),
            _ => None,
        }
    }
}

/// Convex time blend `Θ f(·, t_n) + (1 - Θ) f(·, t_{n-1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blend {
    pub weight: f64,
    pub t_prev: f64,
    pub t_cur: f64,
}

impl Blend {
    pub fn new(weight: f64, t_prev: f64, t_cur: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&weight));
        Self {
            weight,
            t_prev,
            t_cur,
        }
    }

    pub fn scalar(&self, f: &dyn ScalarField, p: Point) -> f64 {
        if f.is_time_independent() {
            return f.value(p, self.t_cur);
        }
        if self.weight == 1.0 {
            return f.value(p, self.t_cur);
        }
        if self.weight == 0.0 {
            return f.value(p, self.t_prev);
        }
        self.weight * f.value(p, self.t_cur) + (1.0 - self.weight) * f.value(p, self.t_prev)
    }

    pub fn vector(&self, a: &VectorField, p: Point) -> [f64; 2] {
        [self.scalar(a.x.as_ref(), p), self.scalar(a.y.as_ref(), p)]
    }

    pub fn jacobian(&self, a: &VectorField, p: Point) -> [[f64; 2]; 2] {
        let blend = |f: &Field| -> [f64; 2] {
            if f.is_time_independent() || self.weight == 1.0 {
                return f.gradient(p, self.t_cur);
            }
            if self.weight == 0.0 {
                return f.gradient(p, self.t_prev);
            }
            let g1 = f.gradient(p, self.t_cur);
            let g0 = f.gradient(p, self.t_prev);
            let w = self.weight;
            [w * g1[0] + (1.0 - w) * g0[0], w * g1[1] + (1.0 - w) * g0[1]]
        };
        [blend(&a.x), blend(&a.y)]
    }
}

/// The blended field for step `n` of a time partition (`1 <= n <= N`).
pub fn blend(times: &[f64], n: usize, weight: f64) -> Blend {
    assert!(n >= 1 && n < times.len(), "step index {n} out of range");
    Blend::new(weight, times[n - 1], times[n])
}
