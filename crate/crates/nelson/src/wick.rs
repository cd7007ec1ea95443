//! Symbolic vacuum expectation values of operator strings by Wick
//! contraction.
//!
//! A string alternates interaction vertices with resolvents of the free
//! operator "field momentum squared plus field energy". Expanding the
//! vacuum expectation over all contraction schemes yields a finite sum of
//! momentum integrals; this module produces those diagrams, merges the
//! ones equal up to relabeling of integration variables, and turns them
//! into evaluable integrands. The perturbative self-energy coefficients
//! are built-in strings.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::{dot3, norm3, phi_radial, Cutoff, ModelParams};

/// Interaction vertex alphabet. Names read left to right in operator
/// order: `Pa` is the field momentum dotted into an annihilator (momentum
/// acts after the annihilation), `Cp` is a creator dotted into the field
/// momentum (momentum acts first).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VertexKind {
    /// A . A, two annihilators smeared with the form factor
    Aa,
    /// A* . A*, two creators
    Cc,
    /// A* . A, creator left of annihilator
    Ca,
    /// A . A*, annihilator left of creator
    Ac,
    /// P . A, field momentum dotted with an annihilator
    Pa,
    /// A* . P, creator dotted with the field momentum
    Cp,
}

impl VertexKind {
    fn token(self) -> &'static str {
        match self {
            VertexKind::Aa => "AA",
            VertexKind::Cc => "CC",
            VertexKind::Ca => "CA",
            VertexKind::Ac => "AC",
            VertexKind::Pa => "PA",
            VertexKind::Cp => "CP",
        }
    }

    fn from_token(tok: &str) -> Option<VertexKind> {
        Some(match tok {
            "AA" => VertexKind::Aa,
            "CC" => VertexKind::Cc,
            "CA" => VertexKind::Ca,
            "AC" => VertexKind::Ac,
            "PA" => VertexKind::Pa,
            "CP" => VertexKind::Cp,
            _ => return None,
        })
    }

    /// Ladder legs in written order; true marks a creator.
    fn legs(self) -> &'static [bool] {
        match self {
            VertexKind::Aa => &[false, false],
            VertexKind::Cc => &[true, true],
            VertexKind::Ca => &[true, false],
            VertexKind::Ac => &[false, true],
            VertexKind::Pa => &[false],
            VertexKind::Cp => &[true],
        }
    }
}

/// A vertex string with implicit free resolvents between consecutive
/// vertices, evaluated between vacuum states.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpString {
    vertices: Vec<VertexKind>,
}

impl OpString {
    pub fn new(vertices: Vec<VertexKind>) -> Result<OpString> {
        if vertices.is_empty() {
            return Err(Error::UnbalancedString("empty operator string".into()));
        }
        Ok(OpString { vertices })
    }

    /// Parse the text form, e.g. "AA R CP R PA R CC". Vertex tokens must
    /// alternate with the resolvent token R.
    pub fn parse(text: &str) -> Result<OpString> {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.is_empty() {
            return Err(Error::UnbalancedString("empty operator string".into()));
        }
        let mut vertices = Vec::new();
        for (i, tok) in toks.iter().enumerate() {
            if i % 2 == 0 {
                let v = VertexKind::from_token(tok).ok_or_else(|| {
                    Error::UnbalancedString(format!("unknown vertex token {tok:?}"))
                })?;
                vertices.push(v);
            } else if *tok != "R" {
                return Err(Error::UnbalancedString(format!(
                    "expected resolvent token R between vertices, got {tok:?}"
                )));
            }
        }
        if toks.len() % 2 == 0 {
            return Err(Error::UnbalancedString(
                "operator string must end on a vertex, not a resolvent".into(),
            ));
        }
        OpString::new(vertices)
    }

    pub fn vertices(&self) -> &[VertexKind] {
        &self.vertices
    }
}

impl fmt::Display for OpString {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        for (i, v) in self.vertices.iter().enumerate() {
            if i > 0 {
                f.write_str(" R ")?;
            }
            f.write_str(v.token())?;
        }
        Ok(())
    }
}

/// One merged contraction class of a vacuum expectation value.
///
/// `pairing` lists contraction lines as (annihilator leg, creator leg)
/// pairs in global leg numbering (legs counted left to right through the
/// string); the annihilator always sits left of the creator, otherwise
/// the contraction vanishes on the vacuum. Line j of the pairing carries
/// integration variable j. `denominators[r]` lists the lines crossing
/// resolvent r, i.e. the photons present in that intermediate state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagram {
    pub pairing: Vec<(usize, usize)>,
    pub multiplicity: u64,
    pub denominators: Vec<Vec<usize>>,
}

/// Dot-product factor contributed by one vertex to a diagram numerator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
enum DotFactor {
    /// phi(k_i) . phi(k_j)
    PhiPhi(usize, usize),
    /// (sum of k_l over the listed lines) . phi(k_j)
    MomPhi(Vec<usize>, usize),
}

/// Fully resolved numerator and denominator structure of one matching.
#[derive(Clone, Debug)]
struct MatchingShape {
    lines: Vec<(usize, usize)>,
    dots: Vec<DotFactor>,
    denoms: Vec<Vec<usize>>,
}

impl MatchingShape {
    /// Structure signature under a relabeling of line indices; two
    /// matchings with equal minimal signatures have identical integrands
    /// after renaming integration variables.
    fn signature(&self, perm: &[usize]) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        for d in &self.dots {
            match d {
                DotFactor::PhiPhi(i, j) => {
                    let (a, b) = (perm[*i].min(perm[*j]), perm[*i].max(perm[*j]));
                    write!(s, "P{a},{b};").unwrap();
                }
                DotFactor::MomPhi(set, j) => {
                    let mut m: Vec<usize> = set.iter().map(|i| perm[*i]).collect();
                    m.sort_unstable();
                    write!(s, "M{m:?}|{};", perm[*j]).unwrap();
                }
            }
        }
        for den in &self.denoms {
            let mut m: Vec<usize> = den.iter().map(|i| perm[*i]).collect();
            m.sort_unstable();
            write!(s, "D{m:?};").unwrap();
        }
        s
    }

    fn canonical_signature(&self) -> String {
        let n = self.lines.len();
        let mut best: Option<String> = None;
        let mut perm: Vec<usize> = (0..n).collect();
        permute_all(&mut perm, 0, &mut |p| {
            let sig = self.signature(p);
            if best.as_ref().is_none_or(|b| sig < *b) {
                best = Some(sig);
            }
        });
        best.expect("at least the identity permutation exists")
    }
}

fn permute_all(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute_all(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

/// Per-leg data gathered from the string: position of each leg, each
/// vertex's dot structure, and the gap index of each resolvent.
struct StringLayout {
    /// is_creator per global leg
    legs: Vec<bool>,
    /// per vertex: leg ids plus the gap of a momentum insertion, if any
    vertex_dots: Vec<VertexDotSpec>,
    /// gap index of resolvent r (gap g sits immediately left of leg g)
    resolvent_gaps: Vec<usize>,
}

enum VertexDotSpec {
    TwoLegs(usize, usize),
    /// momentum insertion at the given gap, dotted with the given leg
    MomAndLeg { gap: usize, leg: usize },
}

fn layout(s: &OpString) -> StringLayout {
    let mut legs = Vec::new();
    let mut vertex_dots = Vec::new();
    let mut resolvent_gaps = Vec::new();
    for (vi, v) in s.vertices().iter().enumerate() {
        if vi > 0 {
            // the resolvent sits left of every leg of this vertex
            resolvent_gaps.push(legs.len());
        }
        let first = legs.len();
        legs.extend_from_slice(v.legs());
        vertex_dots.push(match v {
            VertexKind::Aa | VertexKind::Cc | VertexKind::Ca | VertexKind::Ac => {
                VertexDotSpec::TwoLegs(first, first + 1)
            }
            // momentum is written left of the leg, so it acts after the
            // annihilation: it sees the gap at the leg itself
            VertexKind::Pa => VertexDotSpec::MomAndLeg { gap: first, leg: first },
            // momentum is written right of the creator, acting before it:
            // it sees the gap to the right of the leg
            VertexKind::Cp => VertexDotSpec::MomAndLeg { gap: first + 1, leg: first },
        });
    }
    StringLayout { legs, vertex_dots, resolvent_gaps }
}

/// A line (a, c) puts a photon into every gap g with a < g <= c.
fn crosses(line: (usize, usize), gap: usize) -> bool {
    line.0 < gap && gap <= line.1
}

fn shape_of(lay: &StringLayout, lines: &[(usize, usize)]) -> MatchingShape {
    let line_of_leg = |leg: usize| -> usize {
        lines
            .iter()
            .position(|&(a, c)| a == leg || c == leg)
            .expect("every leg is covered by a perfect matching")
    };
    let dots = lay
        .vertex_dots
        .iter()
        .map(|spec| match spec {
            VertexDotSpec::TwoLegs(p, q) => DotFactor::PhiPhi(line_of_leg(*p), line_of_leg(*q)),
            VertexDotSpec::MomAndLeg { gap, leg } => {
                let set: Vec<usize> = lines
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| crosses(**l, *gap))
                    .map(|(i, _)| i)
                    .collect();
                DotFactor::MomPhi(set, line_of_leg(*leg))
            }
        })
        .collect();
    let denoms = lay
        .resolvent_gaps
        .iter()
        .map(|gap| {
            lines
                .iter()
                .enumerate()
                .filter(|(_, l)| crosses(**l, *gap))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    MatchingShape { lines: lines.to_vec(), dots, denoms }
}

/// Expand a vacuum expectation value into merged contraction diagrams.
///
/// Diagrams whose momentum insertion sees an empty intermediate state are
/// dropped (their numerator vanishes identically), as are strings with no
/// admissible contraction at all, which yield an empty list.
pub fn expand_vev(s: &OpString) -> Result<Vec<Diagram>> {
    let lay = layout(s);
    let anns: Vec<usize> = (0..lay.legs.len()).filter(|&i| !lay.legs[i]).collect();
    let cres: Vec<usize> = (0..lay.legs.len()).filter(|&i| lay.legs[i]).collect();
    if anns.len() != cres.len() {
        return Err(Error::UnbalancedString(format!(
            "string {s} has {} annihilators and {} creators",
            anns.len(),
            cres.len()
        )));
    }

    // enumerate all bijections annihilator -> creator with ann < cre
    let mut classes: BTreeMap<String, (Vec<(usize, usize)>, u64)> = BTreeMap::new();
    let mut assignment: Vec<usize> = (0..cres.len()).collect();
    permute_all(&mut assignment, 0, &mut |asg| {
        let mut lines: Vec<(usize, usize)> = anns
            .iter()
            .zip(asg)
            .map(|(&a, &ci)| (a, cres[ci]))
            .collect();
        if lines.iter().any(|&(a, c)| a > c) {
            return;
        }
        lines.sort_unstable();
        let shape = shape_of(&lay, &lines);
        if shape
            .dots
            .iter()
            .any(|d| matches!(d, DotFactor::MomPhi(set, _) if set.is_empty()))
        {
            return;
        }
        let sig = shape.canonical_signature();
        let entry = classes.entry(sig).or_insert_with(|| (lines.clone(), 0));
        if lines < entry.0 {
            entry.0 = lines;
        }
        entry.1 += 1;
    });

    let mut out: Vec<Diagram> = classes
        .into_values()
        .map(|(lines, count)| {
            let shape = shape_of(&lay, &lines);
            Diagram {
                pairing: lines,
                multiplicity: count,
                denominators: shape.denoms,
            }
        })
        .collect();
    out.sort_by(|a, b| a.pairing.cmp(&b.pairing));
    Ok(out)
}

/// An evaluable sum of diagram integrands for one operator string.
#[derive(Clone, Debug)]
pub struct IntegrandExpr {
    n_vars: usize,
    terms: Vec<Term>,
    lambda: Cutoff,
    ir_shift: f64,
}

#[derive(Clone, Debug)]
struct Term {
    coeff: f64,
    dots: Vec<DotFactor>,
    denoms: Vec<Vec<usize>>,
}

impl IntegrandExpr {
    /// Build the summed integrand of a string's merged diagrams. All
    /// diagrams must come from the same string so their variable counts
    /// agree.
    pub fn from_string(s: &OpString, params: &ModelParams) -> Result<IntegrandExpr> {
        let diagrams = expand_vev(s)?;
        Self::assemble(s, &diagrams, params)
    }

    /// Like `from_string` for diagrams already expanded from `s`.
    pub fn from_diagrams_of(
        s: &OpString,
        diagrams: &[Diagram],
        params: &ModelParams,
    ) -> Result<IntegrandExpr> {
        Self::assemble(s, diagrams, params)
    }

    fn assemble(s: &OpString, diagrams: &[Diagram], params: &ModelParams) -> Result<IntegrandExpr> {
        let lay = layout(s);
        let n_vars = lay.legs.len() / 2;
        let mut terms = Vec::with_capacity(diagrams.len());
        for d in diagrams {
            if d.pairing.len() != n_vars {
                return Err(Error::UnbalancedString(format!(
                    "diagram with {} lines does not fit string {s}",
                    d.pairing.len()
                )));
            }
            let shape = shape_of(&lay, &d.pairing);
            terms.push(Term {
                coeff: d.multiplicity as f64,
                dots: shape.dots,
                denoms: d.denominators.clone(),
            });
        }
        Ok(IntegrandExpr {
            n_vars,
            terms,
            lambda: params.lambda,
            ir_shift: params.ir_shift,
        })
    }

    /// The constant function 1 in n momentum variables; useful as a
    /// sampler control variate since its integral is the cutoff-ball
    /// volume to the n-th power.
    pub fn constant_one(n_vars: usize) -> IntegrandExpr {
        IntegrandExpr {
            n_vars,
            terms: vec![Term { coeff: 1.0, dots: Vec::new(), denoms: Vec::new() }],
            lambda: Cutoff::Infinite,
            ir_shift: 0.0,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Evaluate at one tuple of photon momenta.
    pub fn eval(&self, pts: &[[f64; 3]]) -> f64 {
        debug_assert_eq!(pts.len(), self.n_vars);
        let norms: Vec<f64> = pts.iter().map(|p| norm3(*p)).collect();
        let rhos: Vec<f64> = norms.iter().map(|&k| phi_radial(k, &self.lambda)).collect();
        let mut total = 0.0;
        for t in &self.terms {
            let mut val = t.coeff;
            for d in &t.dots {
                val *= match d {
                    // phi(k) = rho(|k|) k / |k|
                    DotFactor::PhiPhi(i, j) => {
                        rhos[*i] * rhos[*j] * dot3(pts[*i], pts[*j]) / (norms[*i] * norms[*j])
                    }
                    DotFactor::MomPhi(set, j) => {
                        let mut p = [0.0; 3];
                        for &i in set {
                            p[0] += pts[i][0];
                            p[1] += pts[i][1];
                            p[2] += pts[i][2];
                        }
                        rhos[*j] * dot3(p, pts[*j]) / norms[*j]
                    }
                };
            }
            for den in &t.denoms {
                let mut p = [0.0; 3];
                // the infrared shift rides on the field energy as a single
                // additive constant, not per photon
                let mut freq = self.ir_shift;
                for &i in den {
                    p[0] += pts[i][0];
                    p[1] += pts[i][1];
                    p[2] += pts[i][2];
                    freq += norms[i];
                }
                val /= dot3(p, p) + freq;
            }
            total += val;
        }
        total
    }
}

/// One term of the weak-coupling ground-energy expansion: the energy
/// contributes `prefactor * e^e_power * (value of the string's VEV)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub name: String,
    pub string: String,
    pub prefactor: f64,
    pub e_power: u32,
}

/// The built-in expansion: E0 = -e^4 a4 - 4 e^6 b1 - 4 e^6 b2 + 2 e^6 b3
/// plus higher order. b1 runs through a three-photon intermediate state,
/// b2 through a one-photon one, b3 through the creator-annihilator
/// exchange channel.
pub fn coefficient_table() -> Vec<CoefficientSpec> {
    let spec = |name: &str, string: &str, prefactor: f64, e_power: u32| CoefficientSpec {
        name: name.into(),
        string: string.into(),
        prefactor,
        e_power,
    };
    vec![
        spec("a4", "AA R CC", -1.0, 4),
        spec("b1", "AA R PA R CP R CC", -4.0, 6),
        spec("b2", "AA R CP R PA R CC", -4.0, 6),
        spec("b3", "AA R CA R CC", 2.0, 6),
    ]
}

/// The coefficient strings keyed by name.
pub fn builtin_vevs() -> BTreeMap<String, OpString> {
    coefficient_table()
        .into_iter()
        .map(|c| (c.name, OpString::parse(&c.string).expect("built-in strings parse")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::new(0.1, 1.0, Cutoff::Finite(1.0)).unwrap()
    }

    #[test]
    fn parser_round_trips_and_rejects_garbage() {
        let s = OpString::parse("AA R CP R PA R CC").unwrap();
        assert_eq!(s.to_string(), "AA R CP R PA R CC");
        assert!(OpString::parse("").is_err());
        assert!(OpString::parse("AA R").is_err());
        assert!(OpString::parse("AA CC").is_err());
        assert!(OpString::parse("AA R XX").is_err());
    }

    #[test]
    fn unbalanced_strings_are_rejected() {
        let s = OpString::parse("AA R CP").unwrap();
        assert!(matches!(expand_vev(&s), Err(Error::UnbalancedString(_))));
    }

    #[test]
    fn single_vertex_vevs_match_operator_ordering() {
        // A A* on the vacuum contracts once; A* A annihilates it
        let ac = expand_vev(&OpString::parse("AC").unwrap()).unwrap();
        assert_eq!(ac.len(), 1);
        assert_eq!(ac[0].pairing, vec![(0, 1)]);
        assert_eq!(ac[0].multiplicity, 1);
        assert!(ac[0].denominators.is_empty());

        let ca = expand_vev(&OpString::parse("CA").unwrap()).unwrap();
        assert!(ca.is_empty(), "normal-ordered vertex has no vacuum contraction");
    }

    #[test]
    fn builtin_diagram_census_is_stable() {
        // matching counts and class structure for the built-in strings
        let cases = [
            ("a4", vec![2u64]),
            ("b1", vec![2, 4]),
            ("b2", vec![4]),
            ("b3", vec![4]),
        ];
        let vevs = builtin_vevs();
        for (name, mults) in cases {
            let diagrams = expand_vev(&vevs[name]).unwrap();
            let mut got: Vec<u64> = diagrams.iter().map(|d| d.multiplicity).collect();
            got.sort_unstable();
            assert_eq!(got, mults, "class multiplicities for {name}");
        }
    }

    #[test]
    fn a4_diagram_structure_is_the_two_photon_bubble() {
        let diagrams = expand_vev(&builtin_vevs()["a4"]).unwrap();
        assert_eq!(diagrams.len(), 1);
        let d = &diagrams[0];
        assert_eq!(d.pairing, vec![(0, 2), (1, 3)]);
        assert_eq!(d.multiplicity, 2);
        assert_eq!(d.denominators, vec![vec![0, 1]]);
    }

    #[test]
    fn expansion_is_deterministic() {
        let s = OpString::parse("AA R PA R CP R CC").unwrap();
        let a = expand_vev(&s).unwrap();
        let b = expand_vev(&s).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: Vec<Diagram> = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }

    /// Independent oracle: enumerate raw matchings without canonical
    /// merging and evaluate their integrands directly.
    fn brute_force_eval(s: &OpString, pts: &[[f64; 3]], p: &ModelParams) -> f64 {
        let lay = layout(s);
        let anns: Vec<usize> = (0..lay.legs.len()).filter(|&i| !lay.legs[i]).collect();
        let cres: Vec<usize> = (0..lay.legs.len()).filter(|&i| lay.legs[i]).collect();
        let mut total = 0.0;
        let mut assignment: Vec<usize> = (0..cres.len()).collect();
        permute_all(&mut assignment, 0, &mut |asg| {
            let mut lines: Vec<(usize, usize)> =
                anns.iter().zip(asg).map(|(&a, &ci)| (a, cres[ci])).collect();
            if lines.iter().any(|&(a, c)| a > c) {
                return;
            }
            lines.sort_unstable();
            let shape = shape_of(&lay, &lines);
            let one = Diagram {
                pairing: lines,
                multiplicity: 1,
                denominators: shape.denoms.clone(),
            };
            let expr = IntegrandExpr::from_diagrams_of(s, &[one], p).unwrap();
            total += expr.eval(pts);
        });
        total
    }

    #[test]
    fn merged_integrand_matches_brute_force_enumeration() {
        // photon labels are integration dummies: a merged class
        // representative times its multiplicity equals the labeled sum
        // only after averaging over relabelings of the evaluation point,
        // which is exactly the regime the symmetric integration measure
        // sees
        let p = params();
        let pts3 = [
            [0.3, 0.1, -0.2],
            [-0.15, 0.42, 0.05],
            [0.02, -0.33, 0.21],
        ];
        for (name, s) in builtin_vevs() {
            let expr = IntegrandExpr::from_string(&s, &p).unwrap();
            let pts = &pts3[..expr.n_vars()];
            let merged = symmetrized(|arranged| expr.eval(arranged), pts);
            let brute = symmetrized(|arranged| brute_force_eval(&s, arranged, &p), pts);
            assert!(
                (merged - brute).abs() <= 1e-13 * brute.abs().max(1e-3),
                "{name}: merged {merged} vs brute {brute}"
            );
        }
    }

    fn symmetrized(f: impl Fn(&[[f64; 3]]) -> f64, pts: &[[f64; 3]]) -> f64 {
        let mut idx: Vec<usize> = (0..pts.len()).collect();
        let mut total = 0.0;
        let mut count = 0u32;
        permute_all(&mut idx, 0, &mut |perm| {
            let arranged: Vec<[f64; 3]> = perm.iter().map(|&i| pts[i]).collect();
            total += f(&arranged);
            count += 1;
        });
        total / count as f64
    }

    #[test]
    fn integrand_vanishes_beyond_the_cutoff() {
        let p = params();
        let expr = IntegrandExpr::from_string(&builtin_vevs()["a4"], &p).unwrap();
        let v = expr.eval(&[[2.0, 0.0, 0.0], [0.1, 0.0, 0.0]]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn momentum_insertion_on_vacuum_drops_out() {
        // A* . P applied directly to the vacuum kills the state, so the
        // only candidate matching must be pruned
        let s = OpString::parse("PA R CP").unwrap();
        let diagrams = expand_vev(&s).unwrap();
        assert!(diagrams.is_empty(), "momentum of the vacuum is zero");
    }

    #[test]
    fn a4_integrand_matches_hand_formula() {
        let p = params();
        let expr = IntegrandExpr::from_string(&builtin_vevs()["a4"], &p).unwrap();
        let k1 = [0.2, 0.05, -0.1];
        let k2 = [-0.3, 0.22, 0.4];
        let (n1, n2) = (norm3(k1), norm3(k2));
        let rho = |k: f64| phi_radial(k, &p.lambda);
        let cosang = dot3(k1, k2) / (n1 * n2);
        let ksum = [k1[0] + k2[0], k1[1] + k2[1], k1[2] + k2[2]];
        let denom = dot3(ksum, ksum) + n1 + n2 + p.ir_shift;
        let want = 2.0 * (rho(n1) * rho(n2) * cosang).powi(2) / denom;
        let got = expr.eval(&[k1, k2]);
        assert!((got - want).abs() < 1e-15 * want.abs(), "{got} vs {want}");
    }
}
