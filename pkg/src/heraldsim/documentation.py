CLI_DESCRIPTION = \
"""Simulate a CW-pumped heralded single-photon source read out by gated SPADs
and free-running SNSPDs, and analyse the resulting timetags."""

CLI_EPILOG = \
"""# Workflow

    heraldsim simulate --preset reference --output runs/reference
    heraldsim analyze runs/reference --output runs/reference/analysis
    heraldsim simulate --preset characterization --output runs/char
    heraldsim characterize runs/char/channel_0.tags --config runs/char/config.yaml --output runs/char/report
    heraldsim report runs/reference/analysis runs/char/report --output runs/report

Outputs go to --output, else $HERALDSIM_OUTPUT_DIR, else ./heraldsim-output.

# Exit codes

    0  success
    1  usage or configuration error
    2  data error (value outside its domain, unsorted input, unreadable file, capacity exceeded)
    3  estimation failure (not enough signal, fit did not converge)
"""

TAG_FORMAT_DOCUMENTATION = \
"""# Tag files

One file per detector channel, `channel_<n>.tags`: packed little-endian
records of 17 bytes, sorted by time.

    offset  size  field
    0       8     time_ps  unsigned, picoseconds since the start of the run
    8       1     code     channel number (arm number in arrival files)
    9       8     label    see below

Tag labels: the pair id for photon tags, 2^64-2 for dark counts, 2^64-3 for
afterpulses, 2^64-1 when truth labels were not requested
(`outputs.include_truth: false`).

Arrival files (`arrivals_<n>.tags`, `outputs.write_arrivals: true`) hold the
photons reaching a detector input; the code is the arm (0 signal, 1 idler,
2 laser) and the label is the pair id, or the pulse index for laser photons.

With `outputs.tag_format: csv` the same data goes to `channel_<n>.csv` with
columns time_ps, channel and, with truth, origin and pair_id.

`manifest.json` lists every file of a run with its sha256, next to the
config hash, the seed and the library versions.
"""

CONFIG_DOCUMENTATION = \
"""# Run configuration

A YAML file; `heraldsim simulate --preset reference --dump-config` prints a
complete example. Top-level keys:

    source          pair generation rate, bandwidths, mode duration, couplings
    pulsed_laser    rep_rate_hz, mu, pulse_bin and the SPAD channel it illuminates
    detectors       channel number -> detector parameters, `kind: spad` or `kind: snspd`
    topology        routes (arm -> channels with split ratios and transmission),
                    herald_channel, signal_channel, hbt_channels
    duration_s      simulated detector time
    seed            every random stream derives from it
    outputs         directory, tag_format (binary|csv), include_truth, write_arrivals
    analysis        correlation bin widths and spans, heralded window, software deadtime
    characterization  hold-off list and far window for afterpulsing and dark counts
    sweeps          power ladder (powers_uw, reference_power_uw) and SPAD operating points
"""
