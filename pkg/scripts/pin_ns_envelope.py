#!/usr/bin/env python3
"""Measure the Newton-Schulz output singular-value envelope over the fixed
seeded sweep and print the constants to freeze in lanton/lmo.py."""

from lanton.lmo import measure_ns_envelope


def main() -> None:
    env = measure_ns_envelope()
    print("sweep results:")
    for key, value in env.items():
        print(f"  {key} = {value:.6e}")
    print()
    print("pin in src/lanton/lmo.py:")
    print(f"NS_SIGMA_ENVELOPE = ({env['sigma_low']:.6e}, {env['sigma_high']:.6e})")
    print(f"NS_SPECTRAL_ENVELOPE = ({env['spectral_low']:.6e}, {env['spectral_high']:.6e})")


if __name__ == "__main__":
    main()
