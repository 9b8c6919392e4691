//! Pass identifiers, phase orders and the generators that populate the
//! search space.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default upper bound on the number of pass instances in a random order.
pub const DEFAULT_MAX_LEN: usize = 256;

/// Name of a single optimizer pass, without the leading hyphen used on the
/// command line. Restricted to `[a-z0-9-]+`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PassId(String);

impl PassId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidPass {
                name,
                reason: "empty name",
            });
        }
        if !name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        {
            return Err(Error::InvalidPass {
                name,
                reason: "allowed characters are lowercase letters, digits and '-'",
            });
        }
        Ok(PassId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for PassId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PassId::new(s)
    }
}

/// The set of passes a search may draw from.
///
/// Order is significant: it is the canonical enumeration order used for
/// seeding, so the same catalog file and seed always produce the same
/// candidate orders. Passes registered as no-ops are still drawn, but
/// backends that model artifacts may treat them as leaving the code unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PassCatalog {
    passes: Vec<PassId>,
    noops: BTreeSet<PassId>,
}

impl PassCatalog {
    pub fn new(passes: Vec<PassId>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &passes {
            if !seen.insert(p) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate pass {p} in catalog"
                )));
            }
        }
        Ok(PassCatalog {
            passes,
            noops: BTreeSet::new(),
        })
    }

    /// Builds a catalog from pass names.
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let passes = names
            .into_iter()
            .map(|n| PassId::new(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        PassCatalog::new(passes)
    }

    /// Marks `pass` as a no-op, adding it to the catalog if absent.
    pub fn register_noop(&mut self, pass: PassId) {
        if !self.passes.contains(&pass) {
            self.passes.push(pass.clone());
        }
        self.noops.insert(pass);
    }

    pub fn passes(&self) -> &[PassId] {
        &self.passes
    }

    pub fn noops(&self) -> &BTreeSet<PassId> {
        &self.noops
    }

    pub fn len(&self) -> usize {
        self.passes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passes.is_empty()
    }

    /// Parses the catalog file format.
    ///
    /// One pass name per line; `#` starts a comment line. Two directives are
    /// recognised: `deny-prefix:<p>` drops every pass whose name starts with
    /// `p` (applied after the whole file is read), and `noop:<name>` adds a
    /// pass and registers it as a no-op.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names: Vec<(String, bool)> = Vec::new();
        let mut deny = Vec::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(prefix) = line.strip_prefix("deny-prefix:") {
                let prefix = prefix.trim().trim_start_matches('-');
                if prefix.is_empty() {
                    return Err(Error::Format {
                        what: "catalog",
                        detail: "empty deny-prefix directive".into(),
                    });
                }
                deny.push(prefix.to_string());
            } else if let Some(name) = line.strip_prefix("noop:") {
                names.push((name.trim().trim_start_matches('-').to_string(), true));
            } else {
                names.push((line.trim_start_matches('-').to_string(), false));
            }
        }

        let mut catalog = PassCatalog::default();
        let mut seen = HashSet::new();
        for (name, noop) in names {
            if deny.iter().any(|p| name.starts_with(p.as_str())) {
                continue;
            }
            let pass = PassId::new(name)?;
            if !seen.insert(pass.clone()) {
                return Err(Error::Format {
                    what: "catalog",
                    detail: format!("duplicate pass {pass}"),
                });
            }
            if noop {
                catalog.register_noop(pass);
            } else {
                catalog.passes.push(pass);
            }
        }
        Ok(catalog)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PassCatalog::parse(&text)
    }
}

/// An ordered sequence of pass instances. Repetition is allowed.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhaseOrder(Vec<PassId>);

impl PhaseOrder {
    pub fn new(passes: Vec<PassId>) -> Self {
        PhaseOrder(passes)
    }

    pub fn empty() -> Self {
        PhaseOrder(Vec::new())
    }

    pub fn passes(&self) -> &[PassId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_passes(self) -> Vec<PassId> {
        self.0
    }

    /// Copy of this order with the pass instance at `index` removed.
    pub fn without(&self, index: usize) -> PhaseOrder {
        let mut passes = self.0.clone();
        passes.remove(index);
        PhaseOrder(passes)
    }

    /// Whether `needle` occurs as a contiguous run inside this order. The
    /// empty needle is contained in every order.
    pub fn contains_run(&self, needle: &[PassId]) -> bool {
        needle.is_empty() || self.0.windows(needle.len()).any(|w| w == needle)
    }

    /// Pass multiplicities, the quantity preserved by permutation.
    pub fn multiset(&self) -> HashMap<&PassId, usize> {
        let mut counts = HashMap::new();
        for p in &self.0 {
            *counts.entry(p).or_insert(0) += 1;
        }
        counts
    }

    /// Whether `self` can be obtained from `other` by deleting pass instances.
    pub fn is_subsequence_of(&self, other: &PhaseOrder) -> bool {
        let mut it = other.0.iter();
        self.0.iter().all(|p| it.any(|q| q == p))
    }

    pub fn render(&self) -> String {
        render_phase_order(self)
    }
}

impl From<Vec<PassId>> for PhaseOrder {
    fn from(passes: Vec<PassId>) -> Self {
        PhaseOrder(passes)
    }
}

impl fmt::Display for PhaseOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_phase_order(self))
    }
}

impl FromStr for PhaseOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_phase_order(s)
    }
}

// Serialized in command-line form so knowledge-base files stay readable.
impl Serialize for PhaseOrder {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&render_phase_order(self))
    }
}

impl<'de> Deserialize<'de> for PhaseOrder {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_phase_order(&text).map_err(serde::de::Error::custom)
    }
}

/// Parses a whitespace-separated list of hyphen-prefixed pass names, e.g.
/// `-gvn -loop-reduce -licm`.
pub fn parse_phase_order(text: &str) -> Result<PhaseOrder> {
    let mut passes = Vec::new();
    for (index, token) in text.split_whitespace().enumerate() {
        let Some(name) = token.strip_prefix('-') else {
            return Err(Error::PhaseOrderParse {
                index,
                token: token.to_string(),
                reason: "missing leading '-'",
            });
        };
        let pass = PassId::new(name).map_err(|_| Error::PhaseOrderParse {
            index,
            token: token.to_string(),
            reason: "invalid pass name",
        })?;
        passes.push(pass);
    }
    Ok(PhaseOrder(passes))
}

pub fn render_phase_order(order: &PhaseOrder) -> String {
    let mut out = String::new();
    for (i, p) in order.0.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push('-');
        out.push_str(p.as_str());
    }
    out
}

/// Draws a random phase order: the length is uniform on `1..=max_len`, and
/// each pass instance is drawn independently and uniformly from the catalog.
pub fn random_phase_order<R: Rng + ?Sized>(
    catalog: &PassCatalog,
    max_len: usize,
    rng: &mut R,
) -> Result<PhaseOrder> {
    if catalog.is_empty() {
        return Err(Error::InvalidArgument("empty pass catalog".into()));
    }
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let len = rng.gen_range(1..=max_len);
    let passes = (0..len)
        .map(|_| catalog.passes[rng.gen_range(0..catalog.len())].clone())
        .collect();
    Ok(PhaseOrder(passes))
}

/// Number of distinct rearrangements of `order`, saturating at `u128::MAX`.
pub fn distinct_permutation_count(order: &PhaseOrder) -> u128 {
    // Build the multinomial coefficient incrementally as a product of
    // binomials, each of which stays an integer.
    let mut total: u128 = 1;
    let mut placed: u128 = 0;
    let mut counts: Vec<usize> = order.multiset().into_values().collect();
    counts.sort_unstable();
    for c in counts {
        for i in 1..=c as u128 {
            placed += 1;
            match total.checked_mul(placed) {
                Some(v) => total = v / i,
                None => return u128::MAX,
            }
        }
    }
    total
}

/// Rearrangements of `order` that preserve its pass multiset, without
/// duplicates. Returns at most `count` orders.
///
/// When the number of distinct permutations does not exceed `count`, all of
/// them are enumerated (in lexicographic order of first-occurrence ranks);
/// otherwise `count` distinct shuffles are sampled.
pub fn random_permutations<R: Rng + ?Sized>(
    order: &PhaseOrder,
    count: usize,
    rng: &mut R,
) -> Vec<PhaseOrder> {
    if count == 0 {
        return Vec::new();
    }
    let distinct = distinct_permutation_count(order);
    if distinct <= count as u128 {
        return enumerate_permutations(order);
    }

    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut passes = order.0.clone();
    // distinct > count, so every draw has at least a (distinct - count) /
    // distinct chance of being new; the cap only guards pathological RNGs.
    let max_draws = count.saturating_mul(1000).max(10_000);
    for _ in 0..max_draws {
        if out.len() == count {
            break;
        }
        passes.shuffle(rng);
        if seen.insert(passes.clone()) {
            out.push(PhaseOrder(passes.clone()));
        }
    }
    out
}

fn enumerate_permutations(order: &PhaseOrder) -> Vec<PhaseOrder> {
    // Rank passes by first occurrence so the identity permutation comes first.
    let mut ranks: HashMap<&PassId, usize> = HashMap::new();
    for p in &order.0 {
        let next = ranks.len();
        ranks.entry(p).or_insert(next);
    }
    let mut keyed: Vec<(usize, &PassId)> = order.0.iter().map(|p| (ranks[p], p)).collect();
    keyed.sort_by_key(|(r, _)| *r);

    let mut out = Vec::new();
    loop {
        out.push(PhaseOrder(keyed.iter().map(|(_, p)| (*p).clone()).collect()));
        if !next_permutation(&mut keyed) {
            break;
        }
    }
    out
}

fn next_permutation<T: Ord>(items: &mut [T]) -> bool {
    if items.len() < 2 {
        return false;
    }
    let Some(i) = (0..items.len() - 1).rev().find(|&i| items[i] < items[i + 1]) else {
        return false;
    };
    let j = (i + 1..items.len()).rev().find(|&j| items[j] > items[i]).unwrap();
    items.swap(i, j);
    items[i + 1..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn order(text: &str) -> PhaseOrder {
        parse_phase_order(text).unwrap()
    }

    #[test]
    fn pass_id_charset() {
        assert!(PassId::new("loop-reduce").is_ok());
        assert!(PassId::new("reg2mem").is_ok());
        assert!(PassId::new("").is_err());
        assert!(PassId::new("Licm").is_err());
        assert!(PassId::new("a b").is_err());
        assert!(PassId::new("view_cfg").is_err());
    }

    #[test]
    fn single_pass_catalog() {
        let cat = PassCatalog::from_names(["a"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_phase_order(&cat, 1, &mut rng).unwrap(), order("-a"));
        for _ in 0..50 {
            let o = random_phase_order(&cat, 3, &mut rng).unwrap();
            assert!((1..=3).contains(&o.len()));
            assert!(o.passes().iter().all(|p| p.as_str() == "a"));
        }
    }

    #[test]
    fn random_order_is_seeded() {
        let cat = PassCatalog::from_names(["a", "b", "c", "d", "e"]).unwrap();
        let a = random_phase_order(&cat, 64, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = random_phase_order(&cat, 64, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_order_rejects_bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = PassCatalog::default();
        assert!(matches!(
            random_phase_order(&empty, 4, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
        let cat = PassCatalog::from_names(["a"]).unwrap();
        assert!(random_phase_order(&cat, 0, &mut rng).is_err());
    }

    #[test]
    fn length_distribution_is_uniform() {
        let cat = PassCatalog::from_names(["a", "b"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut hist = [0usize; 5];
        let draws = 20_000;
        for _ in 0..draws {
            hist[random_phase_order(&cat, 4, &mut rng).unwrap().len()] += 1;
        }
        assert_eq!(hist[0], 0);
        for &h in &hist[1..] {
            let f = h as f64 / draws as f64;
            assert!((f - 0.25).abs() <= 0.02, "frequency {f}");
        }
    }

    #[test]
    fn permutations_small_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(random_permutations(&order("-a"), 10, &mut rng), vec![order("-a")]);
        assert_eq!(
            random_permutations(&order("-a -b"), 10, &mut rng),
            vec![order("-a -b"), order("-b -a")]
        );
        assert_eq!(
            random_permutations(&PhaseOrder::empty(), 5, &mut rng),
            vec![PhaseOrder::empty()]
        );
    }

    #[test]
    fn permutations_with_repeats_match_brute_force() {
        // Brute force: apply all 3! index permutations and dedup.
        let base = order("-a -a -b");
        let idx = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let brute: BTreeSet<PhaseOrder> = idx
            .iter()
            .map(|p| PhaseOrder(p.iter().map(|&i| base.0[i].clone()).collect()))
            .collect();
        assert_eq!(brute.len(), 3);

        let got = random_permutations(&base, 100, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(got.len(), 3);
        assert_eq!(got.iter().cloned().collect::<BTreeSet<_>>(), brute);
        for p in &got {
            assert_eq!(p.multiset(), base.multiset());
        }
    }

    #[test]
    fn sampled_permutations_are_distinct_and_capped() {
        let base = order("-a -b -c -d -e -f -g");
        let got = random_permutations(&base, 100, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(got.len(), 100);
        let set: HashSet<_> = got.iter().collect();
        assert_eq!(set.len(), 100);
    }

    #[test]
    fn permutation_counts() {
        assert_eq!(distinct_permutation_count(&PhaseOrder::empty()), 1);
        assert_eq!(distinct_permutation_count(&order("-a -a -b")), 3);
        assert_eq!(distinct_permutation_count(&order("-a -b -c -d")), 24);
        assert_eq!(distinct_permutation_count(&order("-a -a -b -b")), 6);
    }

    #[test]
    fn parse_table_rows() {
        let mvt = order("-gvn -loop-reduce -cfl-anders-aa -licm");
        let names: Vec<_> = mvt.passes().iter().map(|p| p.as_str()).collect();
        assert_eq!(names, ["gvn", "loop-reduce", "cfl-anders-aa", "licm"]);
        assert_eq!(order("-instcombine -reg2mem -mem2reg").len(), 3);
        assert!(order("").is_empty());
    }

    #[test]
    fn parse_errors_carry_token_index() {
        match parse_phase_order("-gvn licm") {
            Err(Error::PhaseOrderParse { index, token, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(token, "licm");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_phase_order("-gvn -"),
            Err(Error::PhaseOrderParse { index: 1, .. })
        ));
    }

    #[test]
    fn render_basics() {
        assert_eq!(render_phase_order(&PhaseOrder::empty()), "");
        assert_eq!(render_phase_order(&order("-licm")), "-licm");
    }

    #[test]
    fn catalog_file_directives() {
        let text = "# llvm passes\ndeny-prefix:view-\nlicm\n-gvn\nview-cfg\nview-dom\nnoop:print-memdeps\n\n";
        let cat = PassCatalog::parse(text).unwrap();
        let names: Vec<_> = cat.passes().iter().map(|p| p.as_str()).collect();
        assert_eq!(names, ["licm", "gvn", "print-memdeps"]);
        assert!(cat.noops().contains(&PassId::new("print-memdeps").unwrap()));
        assert!(PassCatalog::parse("licm\nlicm\n").is_err());
        assert!(PassCatalog::parse("Bad Pass\n").is_err());
    }

    #[test]
    fn subsequence_and_runs() {
        let o = order("-a -b -c -a");
        assert!(o.contains_run(&order("-b -c").0));
        assert!(!o.contains_run(&order("-a -c").0));
        assert!(order("-a -c").is_subsequence_of(&o));
        assert!(!order("-c -b").is_subsequence_of(&o));
    }

    proptest::proptest! {
        #[test]
        fn render_parse_roundtrip(names in proptest::collection::vec("[a-z0-9][a-z0-9-]{0,12}", 0..20)) {
            let o = PhaseOrder(names.into_iter().map(|n| PassId::new(n).unwrap()).collect());
            proptest::prop_assert_eq!(parse_phase_order(&render_phase_order(&o)).unwrap(), o);
        }

        #[test]
        fn permutations_preserve_multiset(names in proptest::collection::vec("[a-d]", 0..7), seed in 0u64..1000) {
            let o = PhaseOrder(names.into_iter().map(|n| PassId::new(n).unwrap()).collect());
            let perms = random_permutations(&o, 50, &mut ChaCha8Rng::seed_from_u64(seed));
            let expected = distinct_permutation_count(&o).min(50) as usize;
            proptest::prop_assert_eq!(perms.len(), expected);
            for p in &perms {
                proptest::prop_assert_eq!(p.multiset(), o.multiset());
            }
        }
    }
}
