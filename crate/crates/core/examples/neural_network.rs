//! Fits the dense network to XOR with Adam, then checks the analytic
//! gradient against a central difference on one parameter.

use ndarray::array;
use splash::neuro::{softmax_cross_entropy, Activation, AdamState, DenseNet, Head};

fn main() -> splash::Result<()> {
    let x = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    let labels = [0, 1, 1, 0];
    let mut net: DenseNet<f64> = DenseNet::new(&[2, 8, 2], Activation::Tanh, Head::Softmax, 1)?;
    let mut adam = AdamState::new(&net, 0.05);
    for step in 0..=300 {
        let tape = net.forward_tape(x.clone())?;
        let (loss, d, correct) = softmax_cross_entropy(tape.output.view(), &labels);
        let g = net.backward(&tape, d.view());
        adam.update(&mut net, &g)?;
        if step % 100 == 0 {
            println!("step {step:>3}: loss {loss:.4}, {correct}/4 correct");
        }
    }

    let tape = net.forward_tape(x.clone())?;
    let (_, d, _) = softmax_cross_entropy(tape.output.view(), &labels);
    let analytic = net.backward(&tape, d.view()).flat()[5];
    let theta = net.params_flat();
    let mut loss_at = |delta: f64| -> splash::Result<f64> {
        let mut th = theta.clone();
        th[5] += delta;
        net.set_params_flat(&th)?;
        let out = net.outputs(x.view())?;
        Ok(softmax_cross_entropy(out.view(), &labels).0)
    };
    let h = 1e-5;
    let numeric = (loss_at(h)? - loss_at(-h)?) / (2.0 * h);
    println!("d loss / d theta[5]: analytic {analytic:.8}, numeric {numeric:.8}");
    Ok(())
}
