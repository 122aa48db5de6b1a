"""Code-aided ML symbol-timing recovery for turbo-coded square QAM,
with closed-form Cramer-Rao lower bounds and a Monte-Carlo harness."""

__version__ = "0.1.0"

from .constellation import (AXIS_I, AXIS_Q, LLR_MAX, GrayQam, LlrFrame,
                            bit_prior, build_constellation, coefficients,
                            modulate_bits, soft_demap, soft_demap_frame,
                            symbol_apps)
from .crlb import (CrlbInputs, CrlbReport, ca_crlb, da_crlb, empirical_fisher,
                   gamma_term, nda_crlb, psi)
from .estimator import (SyncConfig, SyncTrace, ca_sync_loop, ml_estimate,
                        nda_estimate, newton_raphson, wrap_delay_error)
from .harness import (ExperimentConfig, ResultRow, load_config, run_ber,
                      run_crlb, run_fisher_validation, run_nmse)
from .likelihood import (LikelihoodContext, ca_llf, ca_llf_grad_hess, log_f,
                         log_f_d1, log_f_d2, make_context, nda_context,
                         nda_llf)
from .turbo import (CodeBitFrame, TurboCodec, TurboConfig, bcjr_siso,
                    plan_frame, turbo_encode)
from .waveform import (MatchedOutputs, PulseBank, SampledSignal, add_awgn,
                       matched_filter, pulse_derivatives, synthesize)
