//! JSON exchange format. Matrices are `{rows, cols, data}` with `data` in
//! row-major order; vectors are plain arrays.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{GameError, LQGame, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        MatrixJson { rows: m.nrows(), cols: m.ncols(), data: m.transpose().iter().copied().collect() }
    }
}

impl TryFrom<&MatrixJson> for DMatrix<f64> {
    type Error = GameError;

    fn try_from(m: &MatrixJson) -> Result<Self, GameError> {
        if m.data.len() != m.rows * m.cols {
            return Err(GameError::Io(format!("matrix {}x{} has {} entries", m.rows, m.cols, m.data.len())));
        }
        Ok(DMatrix::from_row_slice(m.rows, m.cols, &m.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageJson {
    pub a: MatrixJson,
    pub b: Vec<MatrixJson>,
    pub w: MatrixJson,
    pub q: Vec<MatrixJson>,
    pub l: Vec<Vec<f64>>,
    pub r: Vec<Vec<MatrixJson>>,
    #[serde(default)]
    pub c: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameJson {
    pub theta: Vec<f64>,
    pub stages: Vec<StageJson>,
    pub terminal_q: Vec<MatrixJson>,
    pub terminal_l: Vec<Vec<f64>>,
}

fn mats(ms: &[MatrixJson]) -> Result<Vec<DMatrix<f64>>, GameError> {
    ms.iter().map(DMatrix::try_from).collect()
}

fn vecs(vs: &[Vec<f64>]) -> Vec<DVector<f64>> {
    vs.iter().map(|v| DVector::from_vec(v.clone())).collect()
}

impl From<&LQGame> for GameJson {
    fn from(g: &LQGame) -> Self {
        let m = |x: &DMatrix<f64>| MatrixJson::from(x);
        let v = |x: &DVector<f64>| x.iter().copied().collect::<Vec<f64>>();
        GameJson {
            theta: g.theta.clone(),
            stages: g
                .stages
                .iter()
                .map(|s| StageJson {
                    a: m(&s.a),
                    b: s.b.iter().map(m).collect(),
                    w: m(&s.w),
                    q: s.q.iter().map(m).collect(),
                    l: s.l.iter().map(v).collect(),
                    r: s.r.iter().map(|row| row.iter().map(m).collect()).collect(),
                    c: Some(s.c.clone()),
                })
                .collect(),
            terminal_q: g.terminal_q.iter().map(m).collect(),
            terminal_l: g.terminal_l.iter().map(v).collect(),
        }
    }
}

impl TryFrom<&GameJson> for LQGame {
    type Error = GameError;

    fn try_from(j: &GameJson) -> Result<Self, GameError> {
        let p = j.theta.len();
        let stages = j
            .stages
            .iter()
            .map(|s| {
                Ok(Stage {
                    a: DMatrix::try_from(&s.a)?,
                    b: mats(&s.b)?,
                    w: DMatrix::try_from(&s.w)?,
                    q: mats(&s.q)?,
                    l: vecs(&s.l),
                    r: s.r.iter().map(|row| mats(row)).collect::<Result<_, _>>()?,
                    c: s.c.clone().unwrap_or_else(|| vec![0.0; p]),
                })
            })
            .collect::<Result<Vec<_>, GameError>>()?;
        let game = LQGame { stages, terminal_q: mats(&j.terminal_q)?, terminal_l: vecs(&j.terminal_l), theta: j.theta.clone() };
        game.validate()?;
        Ok(game)
    }
}

impl LQGame {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GameJson::from(self)).expect("game serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GameError> {
        let j: GameJson = serde_json::from_str(text).map_err(|e| GameError::Io(e.to_string()))?;
        LQGame::try_from(&j)
    }
}
