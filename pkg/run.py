# /run.py
from app import create_app

# Development app: `flask --app run sim <subcommand>` or `python run.py` for the runs API
app = create_app('Development')

if __name__ == "__main__":
    app.run(debug=True)
