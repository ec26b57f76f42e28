#!/usr/bin/env python3
"""
Initialize backend configuration
Creates .env file with the generation server endpoint and API token
"""

import sys
from pathlib import Path

from backend import TOKEN_ENV, URL_ENV


def init_backend(project_root: Path = Path(__file__).parent.parent):
    """Initialize backend configuration"""
    print("🤖 Generation Backend Initialization\n")

    env_file = project_root / ".env"

    if env_file.exists():
        print("⚠️  .env file already exists!")
        response = input("Do you want to overwrite it? (y/N): ")
        if response.lower() != 'y':
            print("Initialization cancelled.")
            return

    print("📝 Please provide your generation server:")
    print("   (native servers answer POST /v1/generate; use openai:<url> on the command line for vLLM)\n")

    url = input("Backend URL: ").strip()

    if not url.startswith(("http://", "https://")):
        print("❌ Backend URL must start with http:// or https://")
        sys.exit(1)

    print("\n🔑 (Optional) API token sent as a Bearer header:")
    print("   Leave empty if the server needs no authentication.\n")
    token = input("API Token (optional): ").strip()

    env_content = f"""# Generation backend configuration
# DO NOT commit this file to version control!

{URL_ENV}={url}
"""

    if token:
        env_content += f"{TOKEN_ENV}={token}\n"

    with open(env_file, 'w') as f:
        f.write(env_content)

    print(f"\n✅ Saved {URL_ENV}" + (f" and {TOKEN_ENV}" if token else "") + " to .env")
    print("\n📋 Next steps:")
    print("   1. Ask for one beam and check the pieces join: "
          "python scripts/check_backend.py --beam 5 --joining byte-level")
    print("   2. Stream a source<TAB>target corpus: "
          "python scripts/simulmt.py run --corpus data.tsv --preset low-latency --out runs/first")
    print("   3. Trade quality for latency: "
          "python scripts/simulmt.py sweep --corpus data.tsv --gammas 0.4,0.6,0.8 --out runs/sweep")
    print("\n⚠️  Never commit .env; it holds the backend token.")

    gitignore_file = project_root / ".gitignore"
    if not gitignore_file.exists():
        with open(gitignore_file, 'w') as f:
            f.write(".env\n__pycache__/\n*.pyc\n.DS_Store\nruns/\n")
        print("✅ Created .gitignore file")


if __name__ == '__main__':
    try:
        init_backend()
    except KeyboardInterrupt:
        print("\n\nInitialization cancelled.")
        sys.exit(0)
    except Exception as e:
        print(f"\n❌ Error: {e}")
        sys.exit(1)
