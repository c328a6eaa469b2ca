import sys
from dotenv import load_dotenv

# Load environment variables FIRST before any other imports
load_dotenv()

from app.api.cli import cli_main


if __name__ == "__main__":
    sys.exit(cli_main(sys.argv[1:]))
