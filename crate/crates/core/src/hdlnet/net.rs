use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use super::layers::{maxpool, maxpool_backward, relu_backward, relu_in_place, transpose, Conv, UpConv};
use super::lstm::{Lstm, LstmCache};
use super::{ModelParams, NetConfig, RecurrenceAxis, Tensor};
use crate::{Error, Result};

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache<T> {
    input: Vec<T>,
    /// Post-ReLU output of every encoder level (the skip connections).
    enc: Vec<Vec<T>>,
    pool_arg: Vec<Vec<usize>>,
    /// Input of every encoder convolution after the first.
    pooled: Vec<Vec<T>>,
    bottleneck: Vec<T>,
    /// Per decoder level: upsampling input, concatenation, conv output.
    dec_in: Vec<Vec<T>>,
    dec_cat: Vec<Vec<T>>,
    dec_out: Vec<Vec<T>>,
    unet_out: Vec<T>,
    /// LSTM input in sequence layout.
    seq: Vec<T>,
    lstm: LstmCache<T>,
    output: Vec<T>,
}

impl<T: Float> ForwardCache<T> {
    /// Network output `X`, `Nd x Nt` row-major.
    pub fn output(&self) -> &[T] {
        &self.output
    }

    /// Output of the U-Net part alone.
    pub fn unet_output(&self) -> &[T] {
        &self.unet_out
    }

    /// Number of bottleneck activations.
    pub fn bottleneck_len(&self) -> usize {
        self.bottleneck.len()
    }

    /// Which piece of the piecewise-smooth network is active: every ReLU
    /// mask, every pooling choice and the sign of every output. Two inputs
    /// with equal patterns lie on the same smooth piece.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let pos = |v: &[T]| v.iter().map(|&x| usize::from(x > T::zero())).collect::<Vec<_>>();
        let mut out = Vec::new();
        for a in &self.enc {
            out.extend(pos(a));
        }
        for a in &self.pool_arg {
            out.extend_from_slice(a);
        }
        out.extend(pos(&self.bottleneck));
        for a in &self.dec_out {
            out.extend(pos(a));
        }
        out.extend(pos(&self.unet_out));
        out.extend(self.output.iter().map(|&x| {
            if x > T::zero() {
                2
            } else if x < T::zero() {
                0
            } else {
                1
            }
        }));
        out
    }
}

fn check<T: Float>(layer: &str, v: &[T]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("layer {layer}")))
    }
}

fn conv_at(cfg: &NetConfig, level: usize, cin: usize, cout: usize) -> Conv {
    let (h, w) = cfg.level_size(level);
    Conv {
        cin,
        cout,
        h,
        w,
        kh: cfg.conv_kernel.0,
        kw: cfg.conv_kernel.1,
    }
}

fn up_at(cfg: &NetConfig, level: usize) -> UpConv {
    let (h, w) = cfg.level_size(level + 1);
    UpConv {
        cin: cfg.level_channels(level + 1),
        cout: cfg.level_channels(level),
        h,
        w,
        ph: cfg.pool_kernel.0,
        pw: cfg.pool_kernel.1,
    }
}

fn lstm_of(cfg: &NetConfig) -> Lstm {
    Lstm {
        steps: cfg.sequence_len(),
        features: cfg.feature_width(),
        hidden: cfg.lstm_units,
    }
}

fn check_input<T: Float>(cfg: &NetConfig, x: &[T]) -> Result<()> {
    if x.len() != cfg.input_len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} x {} input", cfg.input_channels, cfg.input_time),
            found: format!("{} values", x.len()),
        });
    }
    check("input", x)
}

fn unet_pass<T: Float>(p: &ModelParams<T>, x: &[T], cache: &mut ForwardCache<T>) -> Result<()> {
    let cfg = *p.config();
    let (ph, pw) = cfg.pool_kernel;
    let mut cur = x.to_vec();
    let mut cin = 1;
    for i in 0..cfg.depth {
        let name = format!("enc{i}.conv");
        let cv = conv_at(&cfg, i, cin, cfg.level_channels(i));
        let mut a = cv.forward(
            &cur,
            p.slice(&format!("{name}.weight")),
            p.slice(&format!("{name}.bias")),
        );
        relu_in_place(&mut a);
        check(&name, &a)?;
        let (pooled, arg) = maxpool(&a, cv.cout, cv.h, cv.w, ph, pw);
        cache.enc.push(a);
        cache.pool_arg.push(arg);
        if i > 0 {
            cache.pooled.push(cur);
        }
        cur = pooled;
        cin = cv.cout;
    }
    if cfg.depth > 0 {
        cache.pooled.push(cur.clone());
    }
    let cv = conv_at(&cfg, cfg.depth, cin, cfg.level_channels(cfg.depth));
    let mut b = cv.forward(&cur, p.slice("bottleneck.conv.weight"), p.slice("bottleneck.conv.bias"));
    relu_in_place(&mut b);
    check("bottleneck.conv", &b)?;
    cache.bottleneck = b.clone();
    cur = b;
    cache.dec_in = alloc::vec![Vec::new(); cfg.depth];
    cache.dec_cat = alloc::vec![Vec::new(); cfg.depth];
    cache.dec_out = alloc::vec![Vec::new(); cfg.depth];
    for i in (0..cfg.depth).rev() {
        let up = up_at(&cfg, i);
        let u = up.forward(
            &cur,
            p.slice(&format!("dec{i}.up.weight")),
            p.slice(&format!("dec{i}.up.bias")),
        );
        check(&format!("dec{i}.up"), &u)?;
        let mut cat = cache.enc[i].clone();
        cat.extend_from_slice(&u);
        let c = cfg.level_channels(i);
        let cv = conv_at(&cfg, i, 2 * c, c);
        let mut d = cv.forward(
            &cat,
            p.slice(&format!("dec{i}.conv.weight")),
            p.slice(&format!("dec{i}.conv.bias")),
        );
        relu_in_place(&mut d);
        check(&format!("dec{i}.conv"), &d)?;
        cache.dec_in[i] = core::mem::replace(&mut cur, d.clone());
        cache.dec_cat[i] = cat;
        cache.dec_out[i] = d;
    }
    let cv = conv_at(&cfg, 0, cfg.level_channels(0), 1);
    let mut o = cv.forward(&cur, p.slice("out.conv.weight"), p.slice("out.conv.bias"));
    relu_in_place(&mut o);
    check("out.conv", &o)?;
    cache.unet_out = o;
    Ok(())
}

fn lstm_pass<T: Float>(p: &ModelParams<T>, u: &[T], cache: &mut ForwardCache<T>) -> Result<()> {
    let cfg = *p.config();
    let seq = match cfg.recurrence {
        RecurrenceAxis::Channel => u.to_vec(),
        RecurrenceAxis::Time => transpose(u, cfg.input_channels, cfg.input_time),
    };
    let (y, lc) = lstm_of(&cfg).forward(
        &seq,
        p.slice("lstm.w_ih"),
        p.slice("lstm.w_hh"),
        p.slice("lstm.bias"),
        p.slice("dense.weight"),
        p.slice("dense.bias"),
    );
    check("lstm", &y)?;
    cache.output = match cfg.recurrence {
        RecurrenceAxis::Channel => y,
        RecurrenceAxis::Time => transpose(&y, cfg.input_time, cfg.input_channels),
    };
    cache.seq = seq;
    cache.lstm = lc;
    Ok(())
}

fn empty_cache<T: Float>(x: &[T]) -> ForwardCache<T> {
    ForwardCache {
        input: x.to_vec(),
        enc: Vec::new(),
        pool_arg: Vec::new(),
        pooled: Vec::new(),
        bottleneck: Vec::new(),
        dec_in: Vec::new(),
        dec_cat: Vec::new(),
        dec_out: Vec::new(),
        unet_out: Vec::new(),
        seq: Vec::new(),
        lstm: LstmCache::default(),
        output: Vec::new(),
    }
}

/// Full forward pass keeping every activation for [`backward`].
pub fn forward_cached<T: Float>(p: &ModelParams<T>, x: &[T]) -> Result<ForwardCache<T>> {
    check_input(p.config(), x)?;
    let mut cache = empty_cache(x);
    unet_pass(p, x, &mut cache)?;
    let u = core::mem::take(&mut cache.unet_out);
    lstm_pass(p, &u, &mut cache)?;
    cache.unet_out = u;
    Ok(cache)
}

/// Network output for one `Nd x Nt` input.
pub fn forward<T: Float>(p: &ModelParams<T>, x: &[T]) -> Result<Vec<T>> {
    Ok(forward_cached(p, x)?.output)
}

fn shape2(cfg: &NetConfig) -> [usize; 2] {
    [cfg.input_channels, cfg.input_time]
}

/// U-Net autoencoder alone.
pub fn unet_forward<T: Float>(p: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    check_input(p.config(), x.data())?;
    let mut cache = empty_cache(x.data());
    unet_pass(p, x.data(), &mut cache)?;
    Tensor::from_vec(&shape2(p.config()), cache.unet_out)
}

/// LSTM head alone.
pub fn lstm_forward<T: Float>(p: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    check_input(p.config(), x.data())?;
    let mut cache = empty_cache(x.data());
    lstm_pass(p, x.data(), &mut cache)?;
    Tensor::from_vec(&shape2(p.config()), cache.output)
}

/// The whole network: LSTM head applied to the U-Net output.
pub fn hdlnet_forward<T: Float>(p: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    Tensor::from_vec(&shape2(p.config()), forward(p, x.data())?)
}

/// Reverse pass: gradients of a scalar loss with respect to every parameter,
/// given its gradient `gout` with respect to the network output.
pub fn backward<T: Float>(p: &ModelParams<T>, cache: &ForwardCache<T>, gout: &[T]) -> Result<ModelParams<T>> {
    let cfg = *p.config();
    let mut g = p.zeros_like();

    let gy = match cfg.recurrence {
        RecurrenceAxis::Channel => gout.to_vec(),
        RecurrenceAxis::Time => transpose(gout, cfg.input_channels, cfg.input_time),
    };
    let lg = lstm_of(&cfg).backward(
        &cache.seq,
        p.slice("lstm.w_ih"),
        p.slice("lstm.w_hh"),
        p.slice("dense.weight"),
        &cache.lstm,
        &gy,
    );
    g.accumulate("lstm.w_ih", &lg.w_ih);
    g.accumulate("lstm.w_hh", &lg.w_hh);
    g.accumulate("lstm.bias", &lg.bias);
    g.accumulate("dense.weight", &lg.dense_w);
    g.accumulate("dense.bias", &lg.dense_b);
    let mut gcur = match cfg.recurrence {
        RecurrenceAxis::Channel => lg.x,
        RecurrenceAxis::Time => transpose(&lg.x, cfg.input_time, cfg.input_channels),
    };

    // output conv
    relu_backward(&mut gcur, &cache.unet_out);
    let top_in = if cfg.depth > 0 {
        &cache.dec_out[0]
    } else {
        &cache.bottleneck
    };
    let cv = conv_at(&cfg, 0, cfg.level_channels(0), 1);
    let (gx, gw, gb) = cv.backward(top_in, p.slice("out.conv.weight"), &gcur);
    g.accumulate("out.conv.weight", &gw);
    g.accumulate("out.conv.bias", &gb);
    gcur = gx;

    // decoder, shallowest first; collects gradients for the skips
    let mut gskip: Vec<Vec<T>> = alloc::vec![Vec::new(); cfg.depth];
    for i in 0..cfg.depth {
        let c = cfg.level_channels(i);
        relu_backward(&mut gcur, &cache.dec_out[i]);
        let cv = conv_at(&cfg, i, 2 * c, c);
        let (gcat, gw, gb) = cv.backward(&cache.dec_cat[i], p.slice(&format!("dec{i}.conv.weight")), &gcur);
        g.accumulate(&format!("dec{i}.conv.weight"), &gw);
        g.accumulate(&format!("dec{i}.conv.bias"), &gb);
        let half = gcat.len() / 2;
        gskip[i] = gcat[..half].to_vec();
        let up = up_at(&cfg, i);
        let (gin, gw, gb) = up.backward(&cache.dec_in[i], p.slice(&format!("dec{i}.up.weight")), &gcat[half..]);
        g.accumulate(&format!("dec{i}.up.weight"), &gw);
        g.accumulate(&format!("dec{i}.up.bias"), &gb);
        gcur = gin;
    }

    // bottleneck
    relu_backward(&mut gcur, &cache.bottleneck);
    let cin = if cfg.depth == 0 {
        1
    } else {
        cfg.level_channels(cfg.depth - 1)
    };
    let b_in = if cfg.depth == 0 {
        &cache.input
    } else {
        &cache.pooled[cfg.depth - 1]
    };
    let cv = conv_at(&cfg, cfg.depth, cin, cfg.level_channels(cfg.depth));
    let (gx, gw, gb) = cv.backward(b_in, p.slice("bottleneck.conv.weight"), &gcur);
    g.accumulate("bottleneck.conv.weight", &gw);
    g.accumulate("bottleneck.conv.bias", &gb);
    gcur = gx;

    // encoder, deepest first
    for i in (0..cfg.depth).rev() {
        let mut ga = maxpool_backward(&gcur, &cache.pool_arg[i], cache.enc[i].len());
        for (a, &s) in ga.iter_mut().zip(&gskip[i]) {
            *a = *a + s;
        }
        relu_backward(&mut ga, &cache.enc[i]);
        let cin = if i == 0 { 1 } else { cfg.level_channels(i - 1) };
        let input = if i == 0 { &cache.input } else { &cache.pooled[i - 1] };
        let cv = conv_at(&cfg, i, cin, cfg.level_channels(i));
        let (gx, gw, gb) = cv.backward(input, p.slice(&format!("enc{i}.conv.weight")), &ga);
        g.accumulate(&format!("enc{i}.conv.weight"), &gw);
        g.accumulate(&format!("enc{i}.conv.bias"), &gb);
        gcur = gx;
    }

    for (name, t) in g.entries() {
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok(g)
}
