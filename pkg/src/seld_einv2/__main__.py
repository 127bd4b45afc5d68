#!/usr/bin/env python
"""
Entry point for ``python -m seld_einv2``.
"""

import sys
import warnings

# soundfile and numpy emit format warnings on odd WAV headers
warnings.filterwarnings("ignore", category=DeprecationWarning)

from seld_einv2.main import main

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\nCancelled by user.")
        sys.exit(130)
    except Exception as e:
        print(f"Error: {e}")
        sys.exit(1)
