"""
Backend Server Entry Point

Launches the read-only TrustSAS inspection API over the run directories
written by `python -m src.cli run`.

Usage:
    python server.py

Environment:
    TRUSTSAS_HOST     bind address (default 127.0.0.1)
    TRUSTSAS_PORT     port (default 8000)
    TRUSTSAS_OUT_DIR  run directories to serve (default ./runs)
"""

import uvicorn
import sys
import os
from dotenv import load_dotenv


def main():
    """Main entry point for the backend server"""
    load_dotenv()

    host = os.getenv("TRUSTSAS_HOST", "127.0.0.1")
    try:
        port = int(os.getenv("TRUSTSAS_PORT", "8000"))
    except ValueError:
        print(f"Error: TRUSTSAS_PORT must be an integer, got {os.getenv('TRUSTSAS_PORT')!r}")
        sys.exit(2)

    try:
        print("Starting TrustSAS inspection API...")
        print(f"Runs served from: {os.getenv('TRUSTSAS_OUT_DIR', 'runs')}")
        print(f"API Documentation at: http://{host}:{port}/docs")
        print("Press Ctrl+C to stop the server")
        print("=" * 50)

        uvicorn.run(
            "src.backend.api_main:app",
            host=host,
            port=port,
            reload=os.getenv("TRUSTSAS_RELOAD", "0") == "1",
            log_level="info"
        )

    except KeyboardInterrupt:
        print("\nServer stopped.")
    except Exception as e:
        print(f"Server error: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
