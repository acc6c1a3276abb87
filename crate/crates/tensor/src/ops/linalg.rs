use crate::error::{shape_err, Result};
use crate::float::Float;
use crate::graph::{GradSink, Graph, Var};
use crate::ops::Op;
use crate::tensor::Tensor;

fn dims2<F: Float>(g: &Graph<F>, op: &'static str, v: Var) -> Result<(usize, usize)> {
    match *g.shape(v) {
        [r, c] => Ok((r, c)),
        ref s => shape_err(op, format!("expected a matrix, got {s:?}")),
    }
}

impl<F: Float> Graph<F> {
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2(self, "transpose", x)?;
        let t = self.value(x).data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t[i * c + j];
            }
        }
        let v = Tensor::new(&[c, r], out)?;
        self.push("transpose", v, Op::Transpose(x))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self, "matmul", a)?;
        let (k2, n) = dims2(self, "matmul", b)?;
        if k != k2 {
            return shape_err("matmul", format!("inner dimensions {k} and {k2} differ"));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, self.value(a).data(), k, 1, self.value(b).data(), n, 1, F::zero(), &mut out, n, 1);
        let v = Tensor::new(&[m, n], out)?;
        self.push("matmul", v, Op::Matmul(a, b))
    }

    /// Fully connected layer: `x [b, in]`, `w [out, in]`, `bias [out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (b, fin) = dims2(self, "linear", x)?;
        let (fout, fin2) = dims2(self, "linear", w)?;
        if fin != fin2 {
            return shape_err("linear", format!("input width {fin} vs weight width {fin2}"));
        }
        let mut out = vec![F::zero(); b * fout];
        if let Some(bv) = bias {
            let bt = self.value(bv);
            if bt.shape() != [fout] {
                return shape_err("linear", format!("bias shape {:?}, expected [{fout}]", bt.shape()));
            }
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bt.data());
            }
        }
        F::gemm(b, fin, fout, self.value(x).data(), fin, 1, self.value(w).data(), 1, fin, F::one(), &mut out, fout, 1);
        let v = Tensor::new(&[b, fout], out)?;
        self.push("linear", v, Op::Linear { x, w, b: bias })
    }
}

pub(super) fn backward<F: Float>(graph: &Graph<F>, op: &Op<F>, g: &Tensor<F>, sink: &mut GradSink<'_, F>) {
    match *op {
        Op::Transpose(x) => {
            let s = graph.shape(x);
            let (r, c) = (s[0], s[1]);
            let gd = g.data();
            let mut out = vec![F::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[i * c + j] = gd[j * r + i];
                }
            }
            sink.add_data(x, out);
        }
        Op::Matmul(a, b) => {
            let (m, k) = (graph.shape(a)[0], graph.shape(a)[1]);
            let n = graph.shape(b)[1];
            if sink.wants(a) {
                let mut ga = vec![F::zero(); m * k];
                F::gemm(m, n, k, g.data(), n, 1, graph.value(b).data(), 1, n, F::zero(), &mut ga, k, 1);
                sink.add_data(a, ga);
            }
            if sink.wants(b) {
                let mut gb = vec![F::zero(); k * n];
                F::gemm(k, m, n, graph.value(a).data(), 1, k, g.data(), n, 1, F::zero(), &mut gb, n, 1);
                sink.add_data(b, gb);
            }
        }
        Op::Linear { x, w, b } => {
            let (nb, fin) = (graph.shape(x)[0], graph.shape(x)[1]);
            let fout = graph.shape(w)[0];
            if sink.wants(x) {
                let mut gx = vec![F::zero(); nb * fin];
                F::gemm(nb, fout, fin, g.data(), fout, 1, graph.value(w).data(), fin, 1, F::zero(), &mut gx, fin, 1);
                sink.add_data(x, gx);
            }
            if sink.wants(w) {
                let mut gw = vec![F::zero(); fout * fin];
                F::gemm(fout, nb, fin, g.data(), 1, fout, graph.value(x).data(), fin, 1, F::zero(), &mut gw, fin, 1);
                sink.add_data(w, gw);
            }
            if let Some(b) = b {
                if sink.wants(b) {
                    let mut gb = vec![F::zero(); fout];
                    for row in g.data().chunks(fout) {
                        for (acc, &e) in gb.iter_mut().zip(row) {
                            *acc += e;
                        }
                    }
                    sink.add_data(b, gb);
                }
            }
        }
        _ => unreachable!("not a linear-algebra op"),
    }
}
