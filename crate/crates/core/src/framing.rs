//! LDACS forward-link frame layout: which of the 64 subcarriers carry data,
//! pilots, DC and guard nulls for each of the 54 symbol indices.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{check_len, Error, Result};

pub const FFT_LEN: usize = 64;
pub const SYMBOLS_PER_FRAME: usize = 54;
/// DC bin in FFT-shifted order.
pub const DC_BIN: usize = 32;
/// First and last active bins; 7 low-edge and 6 high-edge guard nulls.
pub const FIRST_ACTIVE: usize = 7;
pub const LAST_ACTIVE: usize = 57;
pub const ACTIVE_CARRIERS: usize = 50;

const DEFAULT_TABLE: &str = include_str!("../data/patterns.txt");

/// 802.11a long training symbol, subcarriers -26..=26 (0 at DC).
const LTS_FREQ: [i8; 53] = [
    1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 0, 1, -1,
    -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1,
];

/// Long training sequence on the 64 shifted bins, restricted to active bins.
pub fn lts_grid() -> [Complex64; FFT_LEN] {
    let mut grid = [Complex64::new(0.0, 0.0); FFT_LEN];
    for bin in active_bins() {
        let k = bin as isize - DC_BIN as isize;
        grid[bin] = Complex64::new(LTS_FREQ[(k + 26) as usize] as f64, 0.0);
    }
    grid
}

pub fn active_bins() -> impl Iterator<Item = usize> {
    (FIRST_ACTIVE..=LAST_ACTIVE).filter(|&b| b != DC_BIN)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierMap {
    pub symbol_index: usize,
    pub data_pos: Vec<usize>,
    pub pilot_pos: Vec<usize>,
    pub pilot_vals: Vec<Complex64>,
    pub dc_pos: usize,
    pub null_pos: Vec<usize>,
}

impl SubcarrierMap {
    fn from_pilots(symbol_index: usize, mut pilots: Vec<(usize, Complex64)>) -> Result<Self> {
        pilots.sort_by_key(|p| p.0);
        for w in pilots.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Config(format!(
                    "symbol {symbol_index}: pilot bin {} listed twice",
                    w[0].0
                )));
            }
        }
        for &(b, _) in &pilots {
            if !(FIRST_ACTIVE..=LAST_ACTIVE).contains(&b) || b == DC_BIN {
                return Err(Error::Config(format!(
                    "symbol {symbol_index}: pilot bin {b} is not an active subcarrier"
                )));
            }
        }
        let data_pos = active_bins()
            .filter(|b| pilots.binary_search_by_key(b, |p| p.0).is_err())
            .collect();
        Ok(Self {
            symbol_index,
            data_pos,
            pilot_pos: pilots.iter().map(|p| p.0).collect(),
            pilot_vals: pilots.iter().map(|p| p.1).collect(),
            dc_pos: DC_BIN,
            null_pos: (0..FIRST_ACTIVE).chain(LAST_ACTIVE + 1..FFT_LEN).collect(),
        })
    }

    fn sync(symbol_index: usize) -> Self {
        let lts = lts_grid();
        let pilots = active_bins().map(|b| (b, lts[b])).collect();
        Self::from_pilots(symbol_index, pilots).expect("active bins are valid pilots")
    }

    pub fn data_len(&self) -> usize {
        self.data_pos.len()
    }
}

/// Enable line (1..=9) the symbol-index controller raises for `index`.
pub fn enable_line(index: usize) -> Result<usize> {
    match index {
        0 => Ok(1),
        51 => Ok(2),
        52 => Ok(3),
        53 => Ok(4),
        1..=50 => Ok(match index % 5 {
            1 => 5,
            2 => 6,
            3 => 7,
            4 => 8,
            _ => 9,
        }),
        _ => Err(Error::SymbolIndex(index)),
    }
}

/// Subcarrier maps for all 54 symbol indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternTable {
    maps: Vec<SubcarrierMap>,
}

impl Default for PatternTable {
    fn default() -> Self {
        static TABLE: OnceLock<PatternTable> = OnceLock::new();
        TABLE
            .get_or_init(|| PatternTable::parse(DEFAULT_TABLE).expect("bundled pattern table"))
            .clone()
    }
}

impl PatternTable {
    /// Parse the plain-text pattern grammar documented in `data/patterns.txt`.
    /// Every index 0..53 must be covered exactly once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut slots: Vec<Option<SubcarrierMap>> = vec![None; SYMBOLS_PER_FRAME];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("");
            if line.trim().is_empty() {
                continue;
            }
            let perr = |tok: &str, message: String| Error::Parse {
                line: lineno + 1,
                column: raw.find(tok).map_or(1, |c| c + 1),
                message,
            };
            let mut toks = line.split_whitespace();
            let idx_tok = toks.next().unwrap_or_default();
            let indices = parse_indices(idx_tok).map_err(|m| perr(idx_tok, m))?;
            let kind = toks.next().unwrap_or("");
            let build: Box<dyn Fn(usize) -> Result<SubcarrierMap>> = match kind {
                "sync" => {
                    if let Some(extra) = toks.next() {
                        return Err(perr(extra, format!("unexpected `{extra}` after sync")));
                    }
                    Box::new(|i| Ok(SubcarrierMap::sync(i)))
                }
                "pilots" => {
                    let mut pilots = Vec::new();
                    for tok in toks {
                        pilots.push(parse_pilot(tok).map_err(|m| perr(tok, m))?);
                    }
                    Box::new(move |i| SubcarrierMap::from_pilots(i, pilots.clone()))
                }
                other => {
                    return Err(perr(
                        if other.is_empty() { idx_tok } else { other },
                        format!("expected `pilots` or `sync`, found `{other}`"),
                    ))
                }
            };
            for i in indices {
                if slots[i].is_some() {
                    return Err(perr(idx_tok, format!("symbol index {i} defined twice")));
                }
                slots[i] = Some(build(i)?);
            }
        }
        let maps = slots
            .into_iter()
            .enumerate()
            .map(|(i, m)| m.ok_or_else(|| Error::Config(format!("symbol index {i} has no pattern"))))
            .collect::<Result<_>>()?;
        Ok(Self { maps })
    }

    pub fn get(&self, symbol_index: usize) -> Result<&SubcarrierMap> {
        self.maps
            .get(symbol_index)
            .ok_or(Error::SymbolIndex(symbol_index))
    }

    /// Replace every pilot value (sync symbols untouched).
    pub fn with_pilot_value(mut self, value: Complex64) -> Self {
        for m in &mut self.maps {
            if !m.data_pos.is_empty() {
                m.pilot_vals.iter_mut().for_each(|v| *v = value);
            }
        }
        self
    }
}

fn parse_indices(tok: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in tok.split(',') {
        let num = |s: &str| -> std::result::Result<usize, String> {
            let v: usize = s
                .parse()
                .map_err(|_| format!("`{s}` is not a symbol index"))?;
            if v >= SYMBOLS_PER_FRAME {
                return Err(format!("symbol index {v} out of range 0..=53"));
            }
            Ok(v)
        };
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range {part}"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    Ok(out)
}

fn parse_pilot(tok: &str) -> std::result::Result<(usize, Complex64), String> {
    let (bin, val) = match tok.split_once('=') {
        Some((b, v)) => (b, Some(v)),
        None => (tok, None),
    };
    let bin: usize = bin
        .parse()
        .map_err(|_| format!("`{bin}` is not a subcarrier bin"))?;
    let value = match val {
        None => Complex64::new(1.0, 0.0),
        Some(v) => {
            let (re, im) = v.split_once(',').unwrap_or((v, "0"));
            let f = |s: &str| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"));
            Complex64::new(f(re)?, f(im)?)
        }
    };
    Ok((bin, value))
}

/// Map for `symbol_index` from the bundled table.
pub fn pattern_for_index(symbol_index: usize) -> Result<SubcarrierMap> {
    PatternTable::default().get(symbol_index).cloned()
}

/// Place data and pilots on a 64-bin grid (shifted order).
pub fn map_symbol(data: &[Complex64], map: &SubcarrierMap) -> Result<[Complex64; FFT_LEN]> {
    check_len("mapped data", map.data_pos.len(), data.len())?;
    let mut grid = [Complex64::new(0.0, 0.0); FFT_LEN];
    for (&p, &d) in map.data_pos.iter().zip(data) {
        grid[p] = d;
    }
    for (&p, &v) in map.pilot_pos.iter().zip(&map.pilot_vals) {
        grid[p] = v;
    }
    Ok(grid)
}

pub fn demap_symbol(grid: &[Complex64], map: &SubcarrierMap) -> Result<Vec<Complex64>> {
    check_len("demapped grid", FFT_LEN, grid.len())?;
    Ok(map.data_pos.iter().map(|&p| grid[p]).collect())
}
