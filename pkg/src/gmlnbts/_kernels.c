/* Direct 3D convolution kernels used as a fast path by conv_engine.py.
 *
 * Layout is (B, C, D, H, W) row-major with W fastest. Zero padding is
 * handled by bounds clamping, so no padded copy of the input is made.
 * Parallel regions partition work by (batch, channel) output slices,
 * which keeps every thread's writes disjoint.
 *
 * Compiled on demand by gmlnbts._native; the pure numpy path in
 * conv_engine.py computes identical results when this file is absent
 * or fails to build.
 */

#include <stdint.h>
#include <string.h>

#define KERNELS_ABI_VERSION 2

int64_t kernels_abi_version(void) { return KERNELS_ABI_VERSION; }

/* y[b,co,od,oh,ow] = sum_{ci,a,c,e} w[co,ci,a,c,e] * x[b,ci,od*sd+a-pd,...] */
#define DEFINE_CONV_FWD(NAME, T)                                              \
void NAME(const T* restrict x, const T* restrict w, T* restrict y,            \
          int64_t B, int64_t Ci, int64_t D, int64_t H, int64_t W,             \
          int64_t Co, int64_t kd, int64_t kh, int64_t kw,                     \
          int64_t sd, int64_t sh, int64_t sw,                                 \
          int64_t pd, int64_t ph, int64_t pw,                                 \
          int64_t Do, int64_t Ho, int64_t Wo)                                 \
{                                                                             \
    const int64_t xc = D * H * W, yc = Do * Ho * Wo;                          \
    _Pragma("omp parallel for collapse(2) schedule(static)")                  \
    for (int64_t b = 0; b < B; b++)                                           \
    for (int64_t co = 0; co < Co; co++) {                                     \
        T* restrict yp = y + (b * Co + co) * yc;                              \
        memset(yp, 0, sizeof(T) * yc);                                        \
        for (int64_t ci = 0; ci < Ci; ci++) {                                 \
            const T* restrict xp = x + (b * Ci + ci) * xc;                    \
            for (int64_t a = 0; a < kd; a++)                                  \
            for (int64_t c = 0; c < kh; c++)                                  \
            for (int64_t e = 0; e < kw; e++) {                                \
                const T ws = w[(((co * Ci + ci) * kd + a) * kh + c) * kw + e];\
                if (ws == (T)0) continue;                                     \
                int64_t od0 = 0, od1 = Do, oh0 = 0, oh1 = Ho;                 \
                int64_t ow0 = 0, ow1 = Wo;                                    \
                while (od0 < Do && od0 * sd + a - pd < 0) od0++;              \
                while (od1 > od0 && (od1 - 1) * sd + a - pd >= D) od1--;      \
                while (oh0 < Ho && oh0 * sh + c - ph < 0) oh0++;              \
                while (oh1 > oh0 && (oh1 - 1) * sh + c - ph >= H) oh1--;      \
                while (ow0 < Wo && ow0 * sw + e - pw < 0) ow0++;              \
                while (ow1 > ow0 && (ow1 - 1) * sw + e - pw >= W) ow1--;      \
                for (int64_t od = od0; od < od1; od++) {                      \
                    const int64_t id = od * sd + a - pd;                      \
                    for (int64_t oh = oh0; oh < oh1; oh++) {                  \
                        const int64_t ih = oh * sh + c - ph;                  \
                        const T* restrict xr =                                \
                            xp + (id * H + ih) * W + (ow0 * sw + e - pw);     \
                        T* restrict yr = yp + (od * Ho + oh) * Wo;            \
                        if (sw == 1) {                                        \
                            _Pragma("omp simd")                               \
                            for (int64_t ow = ow0; ow < ow1; ow++)            \
                                yr[ow] += ws * xr[ow - ow0];                  \
                        } else {                                              \
                            for (int64_t ow = ow0; ow < ow1; ow++)            \
                                yr[ow] += ws * xr[(ow - ow0) * sw];           \
                        }                                                     \
                    }                                                         \
                }                                                             \
            }                                                                 \
        }                                                                     \
    }                                                                         \
}

/* Transposed form. x lives on the coarse grid (B, Cin, Din, Hin, Win) and is
 * scattered into y (B, Cout, Do, Ho, Wo) with y[t*s + k - p] += x[t] * w.
 * Weight layout is (Cin, Cout, kd, kh, kw). Each thread owns one (b, cout)
 * output slice, so the scatter is race free.
 */
#define DEFINE_CONVT_FWD(NAME, T)                                             \
void NAME(const T* restrict x, const T* restrict w, T* restrict y,            \
          int64_t B, int64_t Ci, int64_t Di, int64_t Hi, int64_t Wi,          \
          int64_t Co, int64_t kd, int64_t kh, int64_t kw,                     \
          int64_t sd, int64_t sh, int64_t sw,                                 \
          int64_t pd, int64_t ph, int64_t pw,                                 \
          int64_t Do, int64_t Ho, int64_t Wo)                                 \
{                                                                             \
    const int64_t xc = Di * Hi * Wi, yc = Do * Ho * Wo;                       \
    _Pragma("omp parallel for collapse(2) schedule(static)")                  \
    for (int64_t b = 0; b < B; b++)                                           \
    for (int64_t co = 0; co < Co; co++) {                                     \
        T* restrict yp = y + (b * Co + co) * yc;                              \
        memset(yp, 0, sizeof(T) * yc);                                        \
        for (int64_t ci = 0; ci < Ci; ci++) {                                 \
            const T* restrict xp = x + (b * Ci + ci) * xc;                    \
            for (int64_t a = 0; a < kd; a++)                                  \
            for (int64_t c = 0; c < kh; c++)                                  \
            for (int64_t e = 0; e < kw; e++) {                                \
                const T ws = w[(((ci * Co + co) * kd + a) * kh + c) * kw + e];\
                if (ws == (T)0) continue;                                     \
                int64_t td0 = 0, td1 = Di, th0 = 0, th1 = Hi;                 \
                int64_t tw0 = 0, tw1 = Wi;                                    \
                while (td0 < Di && td0 * sd + a - pd < 0) td0++;              \
                while (td1 > td0 && (td1 - 1) * sd + a - pd >= Do) td1--;     \
                while (th0 < Hi && th0 * sh + c - ph < 0) th0++;              \
                while (th1 > th0 && (th1 - 1) * sh + c - ph >= Ho) th1--;     \
                while (tw0 < Wi && tw0 * sw + e - pw < 0) tw0++;              \
                while (tw1 > tw0 && (tw1 - 1) * sw + e - pw >= Wo) tw1--;     \
                for (int64_t td = td0; td < td1; td++) {                      \
                    const int64_t od = td * sd + a - pd;                      \
                    for (int64_t th = th0; th < th1; th++) {                  \
                        const int64_t oh = th * sh + c - ph;                  \
                        const T* restrict xr = xp + (td * Hi + th) * Wi + tw0;\
                        T* restrict yr =                                      \
                            yp + (od * Ho + oh) * Wo + (tw0 * sw + e - pw);   \
                        if (sw == 1) {                                        \
                            _Pragma("omp simd")                               \
                            for (int64_t t = 0; t < tw1 - tw0; t++)           \
                                yr[t] += ws * xr[t];                          \
                        } else {                                              \
                            for (int64_t t = 0; t < tw1 - tw0; t++)           \
                                yr[t * sw] += ws * xr[t];                     \
                        }                                                     \
                    }                                                         \
                }                                                             \
            }                                                                 \
        }                                                                     \
    }                                                                         \
}

/* gw[ca,cb,a,c,e] = sum_{b,od,oh,ow} g[b,ca,od,oh,ow] * x[b,cb,od*sd+a-pd,...]
 * g lives on the strided (conv output) grid, x on the dense grid.
 */
#define DEFINE_CONV_GRADW(NAME, T)                                            \
void NAME(const T* restrict g, const T* restrict x, T* restrict gw,           \
          int64_t B, int64_t Ca, int64_t Do, int64_t Ho, int64_t Wo,          \
          int64_t Cb, int64_t D, int64_t H, int64_t W,                        \
          int64_t kd, int64_t kh, int64_t kw,                                 \
          int64_t sd, int64_t sh, int64_t sw,                                 \
          int64_t pd, int64_t ph, int64_t pw)                                 \
{                                                                             \
    const int64_t gc = Do * Ho * Wo, xc = D * H * W, kc = kd * kh * kw;       \
    _Pragma("omp parallel for collapse(2) schedule(static)")                  \
    for (int64_t ca = 0; ca < Ca; ca++)                                       \
    for (int64_t cb = 0; cb < Cb; cb++) {                                     \
        T* restrict gwp = gw + (ca * Cb + cb) * kc;                           \
        memset(gwp, 0, sizeof(T) * kc);                                       \
        for (int64_t b = 0; b < B; b++) {                                     \
            const T* restrict gp = g + (b * Ca + ca) * gc;                    \
            const T* restrict xp = x + (b * Cb + cb) * xc;                    \
            for (int64_t a = 0; a < kd; a++)                                  \
            for (int64_t c = 0; c < kh; c++)                                  \
            for (int64_t e = 0; e < kw; e++) {                                \
                int64_t od0 = 0, od1 = Do, oh0 = 0, oh1 = Ho;                 \
                int64_t ow0 = 0, ow1 = Wo;                                    \
                while (od0 < Do && od0 * sd + a - pd < 0) od0++;              \
                while (od1 > od0 && (od1 - 1) * sd + a - pd >= D) od1--;      \
                while (oh0 < Ho && oh0 * sh + c - ph < 0) oh0++;              \
                while (oh1 > oh0 && (oh1 - 1) * sh + c - ph >= H) oh1--;      \
                while (ow0 < Wo && ow0 * sw + e - pw < 0) ow0++;              \
                while (ow1 > ow0 && (ow1 - 1) * sw + e - pw >= W) ow1--;      \
                T acc = (T)0;                                                 \
                for (int64_t od = od0; od < od1; od++) {                      \
                    const int64_t id = od * sd + a - pd;                      \
                    for (int64_t oh = oh0; oh < oh1; oh++) {                  \
                        const int64_t ih = oh * sh + c - ph;                  \
                        const T* restrict gr = gp + (od * Ho + oh) * Wo;      \
                        const T* restrict xr =                                \
                            xp + (id * H + ih) * W + (ow0 * sw + e - pw);     \
                        T row = (T)0;                                         \
                        if (sw == 1) {                                        \
                            _Pragma("omp simd reduction(+:row)")              \
                            for (int64_t ow = ow0; ow < ow1; ow++)            \
                                row += gr[ow] * xr[ow - ow0];                 \
                        } else {                                              \
                            for (int64_t ow = ow0; ow < ow1; ow++)            \
                                row += gr[ow] * xr[(ow - ow0) * sw];          \
                        }                                                     \
                        acc += row;                                           \
                    }                                                         \
                }                                                             \
                gwp[(a * kh + c) * kw + e] += acc;                            \
            }                                                                 \
        }                                                                     \
    }                                                                         \
}

DEFINE_CONV_FWD(conv_fwd_f32, float)
DEFINE_CONV_FWD(conv_fwd_f64, double)
DEFINE_CONVT_FWD(convt_fwd_f32, float)
DEFINE_CONVT_FWD(convt_fwd_f64, double)
DEFINE_CONV_GRADW(conv_gradw_f32, float)
DEFINE_CONV_GRADW(conv_gradw_f64, double)

/* Unit-stride correlation on a pre-padded input, blocked four output
 * channels at a time so every loaded input value feeds 4*kw multiplies.
 * x is (B, Ci, Dp, Hp, Wp) with Dp = Do + kd - 1 etc.
 */
#define CONV2_INNER(T, KW)                                                    \
    for (int64_t ci = 0; ci < Ci; ci++) {                                     \
        const T* restrict xpc = x + (b * Ci + ci) * xc;                       \
        for (int64_t a = 0; a < kd; a++)                                      \
        for (int64_t c = 0; c < kh; c++) {                                    \
            const T* restrict xr = xpc + ((od + a) * Hp + (oh + c)) * Wp;     \
            const T* restrict wr0 = w + (((co * Ci + ci) * kd + a) * kh + c) * kw; \
            const T* restrict wr1 = ct > 1 ? wr0 + Ci * kd * kh * kw : wr0;   \
            const T* restrict wr2 = ct > 2 ? wr1 + Ci * kd * kh * kw : wr0;   \
            const T* restrict wr3 = ct > 3 ? wr2 + Ci * kd * kh * kw : wr0;   \
            _Pragma("omp simd")                                               \
            for (int64_t ow = 0; ow < Wo; ow++) {                             \
                T s0 = acc0[ow], s1 = acc1[ow], s2 = acc2[ow], s3 = acc3[ow]; \
                for (int64_t e = 0; e < (KW); e++) {                          \
                    const T xv = xr[ow + e];                                  \
                    s0 += wr0[e] * xv;                                        \
                    s1 += wr1[e] * xv;                                        \
                    s2 += wr2[e] * xv;                                        \
                    s3 += wr3[e] * xv;                                        \
                }                                                             \
                acc0[ow] = s0; acc1[ow] = s1; acc2[ow] = s2; acc3[ow] = s3;   \
            }                                                                 \
        }                                                                     \
    }

#define DEFINE_CONV_FWD2(NAME, T)                                             \
void NAME(const T* restrict x, const T* restrict w, T* restrict y,            \
          int64_t B, int64_t Ci, int64_t Dp, int64_t Hp, int64_t Wp,          \
          int64_t Co, int64_t kd, int64_t kh, int64_t kw,                     \
          int64_t Do, int64_t Ho, int64_t Wo)                                 \
{                                                                             \
    const int64_t xc = Dp * Hp * Wp, yc = Do * Ho * Wo;                       \
    const int64_t nblk = (Co + 3) / 4;                                        \
    _Pragma("omp parallel for collapse(2) schedule(static)")                  \
    for (int64_t b = 0; b < B; b++)                                           \
    for (int64_t blk = 0; blk < nblk; blk++) {                                \
        const int64_t co = blk * 4;                                           \
        const int64_t ct = (Co - co) < 4 ? (Co - co) : 4;                     \
        T acc0[256], acc1[256], acc2[256], acc3[256];                         \
        for (int64_t od = 0; od < Do; od++)                                   \
        for (int64_t oh = 0; oh < Ho; oh++) {                                 \
            for (int64_t ow = 0; ow < Wo; ow++)                               \
                acc0[ow] = acc1[ow] = acc2[ow] = acc3[ow] = (T)0;             \
            switch (kw) {                                                     \
            case 1: CONV2_INNER(T, 1) break;                                  \
            case 3: CONV2_INNER(T, 3) break;                                  \
            case 5: CONV2_INNER(T, 5) break;                                  \
            default: CONV2_INNER(T, kw) break;                                \
            }                                                                 \
            for (int64_t t = 0; t < ct; t++) {                                \
                const T* acc = t == 0 ? acc0 : t == 1 ? acc1 : t == 2 ? acc2 : acc3; \
                T* restrict yr = y + ((b * Co + co + t) * Do + od) * Ho * Wo + oh * Wo; \
                for (int64_t ow = 0; ow < Wo; ow++) yr[ow] = acc[ow];         \
            }                                                                 \
        }                                                                     \
    }                                                                         \
}

/* Transposed counterpart on the coarse grid, four output channels per
 * pass. Output rows are written through a contiguous staging row, then
 * spread with stride sw, which keeps the FMA loop vectorizable.
 * y must be zero-initialized by the caller; (od, oh) positions are
 * touched by several (a, c) taps.
 */
#define DEFINE_CONVT_FWD2(NAME, T)                                            \
void NAME(const T* restrict x, const T* restrict w, T* restrict y,            \
          int64_t B, int64_t Ci, int64_t Di, int64_t Hi, int64_t Wi,          \
          int64_t Co, int64_t kd, int64_t kh, int64_t kw,                     \
          int64_t sd, int64_t sh, int64_t sw,                                 \
          int64_t pd, int64_t ph, int64_t pw,                                 \
          int64_t Do, int64_t Ho, int64_t Wo)                                 \
{                                                                             \
    const int64_t xc = Di * Hi * Wi, yc = Do * Ho * Wo;                       \
    const int64_t nblk = (Co + 3) / 4;                                        \
    _Pragma("omp parallel for collapse(2) schedule(static)")                  \
    for (int64_t b = 0; b < B; b++)                                           \
    for (int64_t blk = 0; blk < nblk; blk++) {                                \
        const int64_t co = blk * 4;                                           \
        const int64_t ct = (Co - co) < 4 ? (Co - co) : 4;                     \
        T stage[4][256];                                                      \
        for (int64_t a = 0; a < kd; a++)                                      \
        for (int64_t c = 0; c < kh; c++)                                      \
        for (int64_t e = 0; e < kw; e++) {                                    \
            int64_t td0 = 0, td1 = Di, th0 = 0, th1 = Hi, tw0 = 0, tw1 = Wi;  \
            while (td0 < Di && td0 * sd + a - pd < 0) td0++;                  \
            while (td1 > td0 && (td1 - 1) * sd + a - pd >= Do) td1--;         \
            while (th0 < Hi && th0 * sh + c - ph < 0) th0++;                  \
            while (th1 > th0 && (th1 - 1) * sh + c - ph >= Ho) th1--;         \
            while (tw0 < Wi && tw0 * sw + e - pw < 0) tw0++;                  \
            while (tw1 > tw0 && (tw1 - 1) * sw + e - pw >= Wo) tw1--;         \
            const int64_t nw = tw1 - tw0;                                     \
            if (nw <= 0) continue;                                            \
            for (int64_t td = td0; td < td1; td++) {                          \
                const int64_t od = td * sd + a - pd;                          \
                for (int64_t th = th0; th < th1; th++) {                      \
                    const int64_t oh = th * sh + c - ph;                      \
                    for (int64_t t = 0; t < ct; t++)                          \
                        for (int64_t u = 0; u < nw; u++) stage[t][u] = (T)0;  \
                    for (int64_t ci = 0; ci < Ci; ci++) {                     \
                        const T* restrict xr =                                \
                            x + ((b * Ci + ci) * Di + td) * Hi * Wi + th * Wi + tw0; \
                        const T* wp = w + (((ci * Co + co) * kd + a) * kh + c) * kw + e; \
                        const int64_t wstep = kd * kh * kw;                   \
                        const T w0 = wp[0];                                   \
                        const T w1 = ct > 1 ? wp[wstep] : (T)0;               \
                        const T w2 = ct > 2 ? wp[2 * wstep] : (T)0;           \
                        const T w3 = ct > 3 ? wp[3 * wstep] : (T)0;           \
                        _Pragma("omp simd")                                   \
                        for (int64_t u = 0; u < nw; u++) {                    \
                            const T xv = xr[u];                               \
                            stage[0][u] += w0 * xv;                           \
                            stage[1][u] += w1 * xv;                           \
                            stage[2][u] += w2 * xv;                           \
                            stage[3][u] += w3 * xv;                           \
                        }                                                     \
                    }                                                         \
                    for (int64_t t = 0; t < ct; t++) {                        \
                        T* restrict yr = y + ((b * Co + co + t) * Do + od) * Ho * Wo \
                                         + oh * Wo + (tw0 * sw + e - pw);     \
                        for (int64_t u = 0; u < nw; u++) yr[u * sw] += stage[t][u]; \
                    }                                                         \
                }                                                             \
            }                                                                 \
        }                                                                     \
    }                                                                         \
}

DEFINE_CONV_FWD2(conv_fwd2_f32, float)
DEFINE_CONV_FWD2(conv_fwd2_f64, double)
DEFINE_CONVT_FWD2(convt_fwd2_f32, float)
DEFINE_CONVT_FWD2(convt_fwd2_f64, double)
